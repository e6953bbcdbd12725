#pragma once

// Frozen pre-LN Vision Transformer encoder.
//
// Token layout: row 0 class token, rows 1..N patch tokens (row-major over the
// patch grid), rows N+1..N+M prompt tokens. Parameters are read from the
// graph's ParamStore under the canonical checkpoint names below.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "expres/graph.hpp"

namespace expres {

struct ViTConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t dim = 768;
  std::size_t layers = 12;
  std::size_t heads = 12;
  std::size_t mlp_ratio = 4;
  std::size_t channels = 3;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden() const { return mlp_ratio * dim; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  // ContractError on inconsistent extents.
  void validate() const;

  static ViTConfig vit_b16();
  bool operator==(const ViTConfig&) const = default;
};

namespace names {
std::string layer(std::size_t i, const char* suffix);  // "layer{i}.{suffix}"
inline constexpr const char* kPatchW = "patch.W";
inline constexpr const char* kPatchB = "patch.b";
inline constexpr const char* kCls = "cls";
inline constexpr const char* kPos = "pos";
inline constexpr const char* kFinalG = "final_ln.g";
inline constexpr const char* kFinalB = "final_ln.b";
}  // namespace names

// Canonical name -> dims for every backbone tensor.
std::map<std::string, Dims> vit_param_shapes(const ViTConfig& cfg);
std::size_t vit_param_count(const ViTConfig& cfg);

struct ViTWeights {
  ViTConfig config;
  TensorMap tensors;
};

// Truncated-normal(std) matrices and embeddings, zero biases, unit LN gains.
ViTWeights init_vit_weights(const ViTConfig& cfg, std::uint64_t seed, float std = 0.02f);
// FormatError listing every missing, unexpected and mis-shaped entry.
void validate_weights(const TensorMap& tensors, const ViTConfig& cfg);
void save_checkpoint(const ViTWeights& weights, const std::filesystem::path& path);
ViTWeights load_checkpoint(const std::filesystem::path& path, const ViTConfig& cfg);
// Same weights at a new input resolution; pos rows are bilinearly resampled.
ViTWeights adapt_to_resolution(const ViTWeights& weights, std::size_t image_size);

// Residual sites inside one encoder layer.
enum class ResidualSite : std::size_t { LN = 0, Q, K, V, Proj, LNMlp, L1Mlp, L2Mlp };
inline constexpr std::size_t kNumSites = 8;
const char* site_name(ResidualSite site);
std::optional<ResidualSite> parse_site(std::string_view name);
// Width of the residual tensor added at the site (hidden width for L1_mlp, else d).
std::size_t site_width(ResidualSite site, const ViTConfig& cfg);

// Per-layer residual tensors of shape [M, width]; invalid Var = site off.
struct ResidualSet {
  std::array<Var, kNumSites> site{};
  Var operator[](ResidualSite s) const { return site[static_cast<std::size_t>(s)]; }
  Var& operator[](ResidualSite s) { return site[static_cast<std::size_t>(s)]; }
  bool any() const;
};

struct LayerTrace {
  Var input;          // Z^{l-1}
  Var normed;         // Z' (with LN residual)
  Var queries;        // [T,d], all heads, with Q residual
  Var keys_base;      // [T,d] before K residual
  Var keys;           // [T,d] with K residual
  Var values;         // [T,d] with V residual
  std::vector<Var> attention;  // per head [T,T]
  Var msa_out;        // O after W^proj and proj residual
  Var h;              // MSA output + skip
  Var mlp_out;        // MLP branch output before skip
  Var output;         // Z^l
};

struct EncoderTrace {
  std::size_t tokens = 0;
  std::size_t prompts = 0;
  std::vector<LayerTrace> layers;
};

// Row-major patches [N, p*p*C]; within a patch the order is (channel, row, col).
Tensor patchify(const Tensor& image, std::size_t patch_size);
// [N+1, d]: class token and patch projections plus positional embeddings.
Var patchify_embed(Graph& g, const ViTConfig& cfg, const Tensor& image);

Tensor interpolate_pos_embed(const Tensor& pos, std::size_t new_grid);

// Additive logit mask for propagation cutoff: prompts attend only to
// themselves and no token attends to a prompt.
Tensor isolation_mask(std::size_t tokens, std::size_t prompts);

// One MSA block with skip: H = MSA(LN(Z) (+res)) + Z.
Var msa_block(Graph& g, const ViTConfig& cfg, std::size_t layer, Var z, const ResidualSet* residuals,
              std::size_t prompts, const Tensor* mask, LayerTrace* trace);
// One MLP block with skip: Z = MLP(LN(H) (+res)) + H.
Var mlp_block(Graph& g, const ViTConfig& cfg, std::size_t layer, Var h, const ResidualSet* residuals,
              std::size_t prompts, LayerTrace* trace);

struct EncoderOptions {
  std::size_t prompts = 0;
  // Empty, or one entry per layer.
  std::vector<ResidualSet> residuals;
  // Layers >= cutoff isolate prompt tokens; must lie in [0, L].
  std::optional<std::size_t> cutoff;
  // Called with the input of every layer l >= 1; may return a replacement.
  std::function<Var(Graph&, std::size_t layer, Var z)> layer_input;
};

enum class DenseFeature { Keys, Queries, Mlp };

struct EncoderOutput {
  Var tokens;        // Z^L rows 0..N
  Var prompts;       // P^L rows (invalid when M = 0)
  Var patch_keys;    // last-layer keys of patch rows [N, d]
  Var patch_queries; // last-layer queries of patch rows [N, d]
  Var patch_mlp;     // last-layer MLP output of patch rows [N, d]
  EncoderTrace trace;

  Var dense(DenseFeature f) const;
};

EncoderOutput encoder_forward(Graph& g, const ViTConfig& cfg, Var tokens, const EncoderOptions& options);

// LN_final(row 0 of Z^L) as [d].
Var class_representation(Graph& g, Var tokens);

// Plain frozen-ViT representation of one image.
Tensor vit_forward(const ViTWeights& weights, const Tensor& image);

}  // namespace expres
