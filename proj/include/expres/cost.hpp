#pragma once

#include <cstdint>
#include <string>

#include "expres/adaptation.hpp"

namespace expres {

struct CostReport {
  std::uint64_t tuned_params = 0;
  std::uint64_t backbone_params = 0;
  std::uint64_t head_params = 0;
  double tuned_ratio_pct = 0.0;  // 100 * tuned / (backbone + head)
  std::uint64_t macs = 0;

  double gmacs() const { return static_cast<double>(macs) * 1e-9; }
  std::string to_json() const;
};

// Parameters in the classification head for the method (mlp_k adds k-1 d x d layers).
std::uint64_t head_param_count(const AdaptationSpec& spec, const ViTConfig& cfg);

// Closed-form trainable count and MACs for one adaptation of the given encoder.
CostReport count_trainable(const AdaptationSpec& spec, const ViTConfig& cfg);

// Multiply-accumulates of one forward pass with T = N + 1 + M tokens, including
// the patch embedding; `residual_elements` residual additions are counted one each.
std::uint64_t estimate_macs(const ViTConfig& cfg, std::size_t prompts, std::uint64_t residual_elements = 0);

}  // namespace expres
