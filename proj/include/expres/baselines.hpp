#pragma once

// Adaptation methods as trainable-parameter partitions over one ParamStore
// holding the frozen backbone, any prompts, and the classification head.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "expres/adaptation.hpp"
#include "expres/expres.hpp"

namespace expres {

namespace names {
std::string deep_prompt(std::size_t layer);  // "prompt.deep{l}"
}  // namespace names

struct Adaptation {
  AdaptationSpec spec;
  ViTConfig config;
  ParamStore store;
  std::size_t head_depth = 1;

  ExpresOptions expres_options() const;
  // Representation y [d] of one image.
  Var representation(Graph& g, const Tensor& image) const;
  // Logits [B, C] for a batch of images.
  Var logits(Graph& g, const std::vector<const Tensor*>& images) const;
  Tensor predict(const Tensor& image) const;  // [C]

  std::vector<std::string> trainable_names() const { return store.trainable_names(); }
  TensorMap trainables() const { return store.collect(true); }
  TensorMap frozen() const { return store.collect(false); }
  // Replaces trainable values from an archive; every trainable must be present.
  void load_trainables(const TensorMap& tensors);
};

// Names and dims of every tensor the method trains (including the head).
std::map<std::string, Dims> trainable_shapes(const AdaptationSpec& spec, const ViTConfig& cfg);

// Backbone copied into the store frozen, then the method's partition unfrozen
// or added. Prompts and head are initialised from `seed`.
Adaptation build_adaptation(const AdaptationSpec& spec, const ViTWeights& weights, std::uint64_t seed);

// Layer 0 input is [Z0; P_0]; for l >= 1 the prompt rows of the layer input are
// replaced by P_l. y = LN(Z^L_cls).
Var vpt_deep_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts);
Tensor vpt_deep_forward(const Tensor& image, const ViTWeights& weights, const std::vector<Tensor>& layer_prompts);
// Input prompts propagated through every layer; y = LN(Z^L_cls).
Var vpt_shallow_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts,
                      std::optional<std::size_t> cutoff = std::nullopt);
Tensor vpt_shallow_forward(const Tensor& image, const ViTWeights& weights, const Tensor& prompts);

}  // namespace expres
