#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "expres/vit.hpp"

namespace expres {

// Which residual sites carry prompts, over the inclusive layer range [start, end].
struct ResidualSiteConfig {
  std::vector<ResidualSite> sites;
  std::size_t start_layer = 0;
  std::size_t end_layer = 0;

  // LN, Q, K, V, proj over every layer.
  static ResidualSiteConfig attention(std::size_t layers);
  static ResidualSiteConfig none();

  bool enabled(ResidualSite site) const;
  bool covers(std::size_t layer) const { return !sites.empty() && layer >= start_layer && layer <= end_layer; }
  std::size_t layer_count() const { return sites.empty() ? 0 : end_layer - start_layer + 1; }
  // Appends violations (with field paths under `path`) instead of throwing.
  void check(std::size_t layers, const std::string& path, std::vector<std::string>& errors) const;
};

enum class Method { Linear, MlpK, Bias, PartialK, FtAll, VptShallow, VptDeep, Expres };

const char* method_name(Method method);
std::optional<Method> parse_method(std::string_view name);
const std::vector<Method>& all_methods();
bool is_prompting(Method method);

struct AdaptationSpec {
  Method method = Method::Expres;
  std::size_t k = 1;           // mlp_k depth / partial_k layers
  std::size_t prompts = 10;    // M
  ResidualSiteConfig sites;    // expres only
  std::size_t num_classes = 2;
  std::optional<std::size_t> cutoff;  // expres / vpt_shallow propagation ablation

  std::vector<std::string> violations(const ViTConfig& cfg, const std::string& path = "adaptation") const;
  // ContractError listing every violation.
  void validate(const ViTConfig& cfg) const;
};

}  // namespace expres
