#include "expres/adaptation.hpp"

#include <algorithm>

#include "expres/errors.hpp"

namespace expres {

ResidualSiteConfig ResidualSiteConfig::attention(std::size_t layers) {
  return ResidualSiteConfig{
      {ResidualSite::LN, ResidualSite::Q, ResidualSite::K, ResidualSite::V, ResidualSite::Proj}, 0, layers - 1};
}

ResidualSiteConfig ResidualSiteConfig::none() { return ResidualSiteConfig{{}, 0, 0}; }

bool ResidualSiteConfig::enabled(ResidualSite site) const {
  return std::find(sites.begin(), sites.end(), site) != sites.end();
}

void ResidualSiteConfig::check(std::size_t layers, const std::string& path, std::vector<std::string>& errors) const {
  if (sites.empty()) return;
  if (start_layer > end_layer) {
    errors.push_back(path + ".start_layer: " + std::to_string(start_layer) + " > end_layer " +
                     std::to_string(end_layer));
  }
  if (end_layer >= layers) {
    errors.push_back(path + ".end_layer: " + std::to_string(end_layer) + " must be < L = " + std::to_string(layers));
  }
  std::vector<ResidualSite> sorted = sites;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    errors.push_back(path + ".sites: duplicate site");
  }
}

const char* method_name(Method method) {
  switch (method) {
    case Method::Linear: return "linear";
    case Method::MlpK: return "mlp_k";
    case Method::Bias: return "bias";
    case Method::PartialK: return "partial_k";
    case Method::FtAll: return "ft_all";
    case Method::VptShallow: return "vpt_shallow";
    case Method::VptDeep: return "vpt_deep";
    case Method::Expres: return "expres";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view name) {
  std::string norm(name);
  std::replace(norm.begin(), norm.end(), '-', '_');
  for (Method m : all_methods()) {
    if (norm == method_name(m)) return m;
  }
  return std::nullopt;
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::Linear,  Method::MlpK,       Method::Bias,    Method::PartialK,
                                           Method::FtAll,   Method::VptShallow, Method::VptDeep, Method::Expres};
  return methods;
}

bool is_prompting(Method method) {
  return method == Method::VptShallow || method == Method::VptDeep || method == Method::Expres;
}

std::vector<std::string> AdaptationSpec::violations(const ViTConfig& cfg, const std::string& path) const {
  std::vector<std::string> errors;
  if ((method == Method::MlpK || method == Method::PartialK) && k < 1) {
    errors.push_back(path + ".k: must satisfy k >= 1");
  }
  if (method == Method::PartialK && k > cfg.layers) {
    errors.push_back(path + ".k: partial_k needs k <= L = " + std::to_string(cfg.layers));
  }
  if (is_prompting(method) && prompts < 1) errors.push_back(path + ".M: prompting methods need M ≥ 1");
  if (num_classes < 2) errors.push_back(path + ".num_classes: need C >= 2");
  if (method == Method::Expres) sites.check(cfg.layers, path, errors);
  if (cutoff && *cutoff > cfg.layers) {
    errors.push_back(path + ".cutoff: " + std::to_string(*cutoff) + " outside [0, " + std::to_string(cfg.layers) +
                     "]");
  }
  return errors;
}

void AdaptationSpec::validate(const ViTConfig& cfg) const {
  const auto errors = violations(cfg);
  if (errors.empty()) return;
  std::string msg = "invalid adaptation spec:";
  for (const auto& e : errors) msg += " " + e + ";";
  throw ContractError(msg);
}

}  // namespace expres
