#pragma once

// Expressive prompting with residual tokens.
//
// Shallow prompts P0 [M,d] are appended after the patch tokens and propagated
// through the frozen encoder. At every layer in the configured range, residual
// prompts are added at the prompt rows of the enabled sites. The representation
// is the frozen final LayerNorm of the mean over the M propagated prompt rows.

#include <cstdint>
#include <map>
#include <optional>
#include <utility>

#include "expres/adaptation.hpp"
#include "expres/vit.hpp"

namespace expres {

struct PromptBank {
  Tensor p0;  // [M, d]
  std::map<std::pair<std::size_t, ResidualSite>, Tensor> residuals;  // (layer, site) -> [M, width]

  std::size_t prompts() const { return p0.empty() ? 0 : p0.dim(0); }
  // Archive names: prompt.P0, prompt.d{l}.{site}
  TensorMap to_tensors() const;
  static PromptBank from_tensors(const TensorMap& tensors);
  std::size_t parameter_count() const;
};

namespace names {
inline constexpr const char* kPrompt0 = "prompt.P0";
std::string residual(std::size_t layer, ResidualSite site);
}  // namespace names

// P0 ~ truncated normal(0.02), every residual exactly zero.
PromptBank init_prompts(const ResidualSiteConfig& sites, const ViTConfig& cfg, std::size_t prompts,
                        std::uint64_t seed);

struct ExpresOptions {
  ResidualSiteConfig sites;
  bool residuals_enabled = true;       // false: shallow-prompt model
  std::optional<std::size_t> cutoff;   // propagation ablation
};

struct ExpresGraph {
  Var y;  // [d]
  EncoderOutput encoder;
};

// Builds the forward on `g`; P0 and residuals are bound from the graph's store by name.
ExpresGraph expres_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts,
                         const ExpresOptions& options);

// Values of the per-layer intermediate tensors of one forward pass.
struct LayerActivations {
  Tensor normed, queries, keys_base, keys, values, msa_out, h, output;
  std::vector<Tensor> attention;  // per head [T,T]
};
struct Activations {
  std::size_t tokens = 0, prompts = 0, grid = 0;
  std::vector<LayerActivations> layers;
};
Activations collect_activations(const Graph& g, const EncoderTrace& trace, std::size_t grid);

struct ExpresResult {
  Tensor y;
  Tensor prompts_out;  // P^L
  Tensor tokens_out;   // Z^L
  Activations activations;
};

ExpresResult expres_forward(const Tensor& image, const ViTWeights& weights, const PromptBank& bank,
                            const ExpresOptions& options);

// Attention with the K residual computed directly versus base weights times
// alpha_ij = exp(q_i . dK_j / sqrt(d/N_h)) renormalised; maximum absolute
// discrepancy over every layer, head, query and key.
float verify_reweighting(const ViTWeights& weights, const PromptBank& bank, const Tensor& image,
                         const ExpresOptions& options);

// Head-averaged attention of prompt `prompt_index` over the N patch keys at
// `layer`, renormalised over patch columns and reshaped to [g, g].
Tensor dump_prompt_attention(const Activations& activations, std::size_t prompt_index, std::size_t layer);

}  // namespace expres
