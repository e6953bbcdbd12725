#include "expres/cost.hpp"

#include "json.hpp"

namespace expres {

std::string CostReport::to_json() const {
  nlohmann::ordered_json j;
  j["tuned_params"] = tuned_params;
  j["backbone_params"] = backbone_params;
  j["tuned_ratio_pct"] = tuned_ratio_pct;
  j["gmacs"] = gmacs();
  return j.dump();
}

std::uint64_t head_param_count(const AdaptationSpec& spec, const ViTConfig& cfg) {
  const std::uint64_t d = cfg.dim, c = spec.num_classes;
  std::uint64_t n = d * c + c;
  if (spec.method == Method::MlpK && spec.k > 1) n += (spec.k - 1) * (d * d + d);
  return n;
}

std::uint64_t estimate_macs(const ViTConfig& cfg, std::size_t prompts, std::uint64_t residual_elements) {
  const std::uint64_t t = cfg.num_patches() + 1 + prompts;
  const std::uint64_t d = cfg.dim;
  const std::uint64_t hidden = cfg.hidden();
  const std::uint64_t per_layer = 3 * t * d * d    // Q, K, V
                                  + 2 * t * t * d  // scores and weighted values
                                  + t * d * d      // output projection
                                  + 2 * t * d * hidden;
  const std::uint64_t embed = static_cast<std::uint64_t>(cfg.num_patches()) * cfg.patch_dim() * d;
  return per_layer * cfg.layers + embed + residual_elements;
}

CostReport count_trainable(const AdaptationSpec& spec, const ViTConfig& cfg) {
  const std::uint64_t d = cfg.dim, m = spec.prompts, layers = cfg.layers, hidden = cfg.hidden();
  const std::uint64_t layer_params = 4 * (d * d + d) + 4 * d + d * hidden + hidden + hidden * d + d;

  CostReport r;
  r.backbone_params = vit_param_count(cfg);
  r.head_params = head_param_count(spec, cfg);
  std::uint64_t tuned = 0;
  std::uint64_t residual_elements = 0;
  std::size_t tokens_extra = 0;
  switch (spec.method) {
    case Method::Linear:
    case Method::MlpK:
      break;
    case Method::Bias:
      // patch.b, final_ln.b, and per layer ln1.b, Wq/Wk/Wv/Wproj.b, ln2.b, mlp.b2 (d each) plus mlp.b1 (hidden)
      tuned = 2 * d + layers * (7 * d + hidden);
      break;
    case Method::PartialK:
      tuned = spec.k == layers ? r.backbone_params : spec.k * layer_params + 2 * d;
      break;
    case Method::FtAll:
      tuned = r.backbone_params;
      break;
    case Method::VptShallow:
      tuned = m * d;
      tokens_extra = m;
      break;
    case Method::VptDeep:
      tuned = layers * m * d;
      tokens_extra = m;
      break;
    case Method::Expres: {
      std::uint64_t width = 0;
      for (ResidualSite s : spec.sites.sites) width += site_width(s, cfg);
      residual_elements = spec.sites.layer_count() * m * width;
      tuned = m * d + residual_elements;
      tokens_extra = m;
      break;
    }
  }
  r.tuned_params = tuned + r.head_params;
  r.tuned_ratio_pct =
      100.0 * static_cast<double>(r.tuned_params) / static_cast<double>(r.backbone_params + r.head_params);
  r.macs = estimate_macs(cfg, tokens_extra, residual_elements);
  return r;
}

}  // namespace expres
