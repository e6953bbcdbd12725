#include "expres/baselines.hpp"

#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/tasks.hpp"

namespace expres {

std::string names::deep_prompt(std::size_t layer) { return "prompt.deep" + std::to_string(layer); }

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_bias_term(const std::string& name) {
  return ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2");
}

std::size_t head_depth_of(const AdaptationSpec& spec) { return spec.method == Method::MlpK ? spec.k : 1; }

std::vector<std::string> backbone_partition(const AdaptationSpec& spec, const ViTConfig& cfg) {
  std::vector<std::string> out;
  const auto shapes = vit_param_shapes(cfg);
  switch (spec.method) {
    case Method::Bias:
      for (const auto& [name, dims] : shapes)
        if (is_bias_term(name)) out.push_back(name);
      break;
    case Method::PartialK:
      for (const auto& [name, dims] : shapes) {
        // k = L covers the embeddings too, so the partition equals ft_all.
        bool take = name == names::kFinalG || name == names::kFinalB || spec.k == cfg.layers;
        for (std::size_t l = cfg.layers - spec.k; l < cfg.layers; ++l)
          if (name.rfind("layer" + std::to_string(l) + ".", 0) == 0) take = true;
        if (take) out.push_back(name);
      }
      break;
    case Method::FtAll:
      for (const auto& [name, dims] : shapes) out.push_back(name);
      break;
    default:
      break;
  }
  return out;
}

TensorMap method_prompts(const AdaptationSpec& spec, const ViTConfig& cfg, std::uint64_t seed) {
  TensorMap out;
  Rng rng(derive_seed(seed, "vpt-prompt-init"));
  switch (spec.method) {
    case Method::VptShallow:
      out.emplace(names::kPrompt0, trunc_normal_tensor({spec.prompts, cfg.dim}, 0.02f, rng));
      break;
    case Method::VptDeep:
      for (std::size_t l = 0; l < cfg.layers; ++l)
        out.emplace(names::deep_prompt(l), trunc_normal_tensor({spec.prompts, cfg.dim}, 0.02f, rng));
      break;
    case Method::Expres:
      out = init_prompts(spec.sites, cfg, spec.prompts, seed).to_tensors();
      break;
    default:
      break;
  }
  return out;
}

Var deep_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts) {
  const Var z0 = patchify_embed(g, cfg, image);
  const Var p0 = g.param(names::deep_prompt(0));
  EncoderOptions enc;
  enc.prompts = prompts;
  const std::size_t keep = cfg.num_patches() + 1;
  enc.layer_input = [keep, prompts, &cfg](Graph& gr, std::size_t layer, Var z) {
    Graph::Scope scope(gr, "vpt_deep");
    const Var pl = gr.param(names::deep_prompt(layer));
    if (gr.dims(pl) != Dims{prompts, cfg.dim}) {
      gr.shape_error("vpt_deep", names::deep_prompt(layer) + " has dims " + to_string(gr.dims(pl)));
    }
    return ops::concat(gr, {ops::slice(gr, z, 0, 0, keep), pl}, 0);
  };
  if (g.dims(p0) != Dims{prompts, cfg.dim}) {
    g.shape_error("vpt_deep", names::deep_prompt(0) + " has dims " + to_string(g.dims(p0)));
  }
  const EncoderOutput out = encoder_forward(g, cfg, ops::concat(g, {z0, p0}, 0), enc);
  return class_representation(g, out.tokens);
}

}  // namespace

ExpresOptions Adaptation::expres_options() const {
  ExpresOptions o;
  o.sites = spec.sites;
  o.cutoff = spec.cutoff;
  return o;
}

Var Adaptation::representation(Graph& g, const Tensor& image) const {
  switch (spec.method) {
    case Method::Linear:
    case Method::MlpK:
    case Method::Bias:
    case Method::PartialK:
    case Method::FtAll: {
      const Var z0 = patchify_embed(g, config, image);
      EncoderOptions enc;
      return class_representation(g, encoder_forward(g, config, z0, enc).tokens);
    }
    case Method::VptShallow:
      return vpt_shallow_graph(g, config, image, spec.prompts, spec.cutoff);
    case Method::VptDeep:
      return deep_graph(g, config, image, spec.prompts);
    case Method::Expres:
      return expres_graph(g, config, image, spec.prompts, expres_options()).y;
  }
  throw ContractError("unknown adaptation method");
}

Var Adaptation::logits(Graph& g, const std::vector<const Tensor*>& images) const {
  if (images.empty()) throw ContractError("logits: empty batch");
  std::vector<Var> ys;
  ys.reserve(images.size());
  for (const Tensor* img : images) {
    const Var y = representation(g, *img);
    ys.push_back(ops::reshape(g, y, {1, config.dim}));
  }
  const Var batch = ys.size() == 1 ? ys[0] : ops::concat(g, ys, 0);
  return apply_head(g, batch, head_depth);
}

Tensor Adaptation::predict(const Tensor& image) const {
  Graph g(store, false);
  const Var l = logits(g, {&image});
  return g.value(l).reshaped({spec.num_classes});
}

void Adaptation::load_trainables(const TensorMap& tensors) {
  for (const std::string& name : store.trainable_names()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("trainables archive is missing '" + name + "'");
    if (it->second.dims() != store.value(name).dims()) {
      throw FormatError("trainables archive entry '" + name + "' has dims " + to_string(it->second.dims()) +
                        ", expected " + to_string(store.value(name).dims()));
    }
    store.assign(name, it->second);
  }
}

std::map<std::string, Dims> trainable_shapes(const AdaptationSpec& spec, const ViTConfig& cfg) {
  spec.validate(cfg);
  std::map<std::string, Dims> out;
  const auto shapes = vit_param_shapes(cfg);
  for (const std::string& name : backbone_partition(spec, cfg)) out.emplace(name, shapes.at(name));
  for (const auto& [name, t] : method_prompts(spec, cfg, 0)) out.emplace(name, t.dims());
  for (const auto& [name, t] : init_head(cfg.dim, spec.num_classes, head_depth_of(spec), 0)) out.emplace(name, t.dims());
  return out;
}

Adaptation build_adaptation(const AdaptationSpec& spec, const ViTWeights& weights, std::uint64_t seed) {
  spec.validate(weights.config);
  Adaptation a;
  a.spec = spec;
  a.config = weights.config;
  a.head_depth = head_depth_of(spec);
  a.store.add_all(weights.tensors, false);
  for (const std::string& name : backbone_partition(spec, weights.config)) a.store.set_trainable(name, true);
  a.store.add_all(method_prompts(spec, weights.config, derive_seed(seed, "prompts")), true);
  a.store.add_all(init_head(weights.config.dim, spec.num_classes, a.head_depth, derive_seed(seed, "head")), true);
  return a;
}

Var vpt_deep_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts) {
  return deep_graph(g, cfg, image, prompts);
}

Tensor vpt_deep_forward(const Tensor& image, const ViTWeights& weights, const std::vector<Tensor>& layer_prompts) {
  const ViTConfig& cfg = weights.config;
  if (layer_prompts.size() != cfg.layers) {
    throw ShapeError("vpt_deep: expected " + std::to_string(cfg.layers) + " prompt tensors, got " +
                     std::to_string(layer_prompts.size()));
  }
  const std::size_t m = layer_prompts[0].rank() == 2 ? layer_prompts[0].dim(0) : 0;
  ParamStore store;
  store.add_all(weights.tensors, false);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    if (layer_prompts[l].dims() != Dims{m, cfg.dim} || m == 0) {
      throw ShapeError("vpt_deep: layer " + std::to_string(l) + " prompts have dims " +
                       to_string(layer_prompts[l].dims()));
    }
    store.add(names::deep_prompt(l), layer_prompts[l], true);
  }
  Graph g(store, false);
  return g.value(deep_graph(g, cfg, image, m));
}

Var vpt_shallow_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts,
                      std::optional<std::size_t> cutoff) {
  const Var z0 = patchify_embed(g, cfg, image);
  const Var p0 = g.param(names::kPrompt0);
  if (g.dims(p0) != Dims{prompts, cfg.dim}) {
    g.shape_error("vpt_shallow", std::string(names::kPrompt0) + " has dims " + to_string(g.dims(p0)));
  }
  EncoderOptions enc;
  enc.prompts = prompts;
  enc.cutoff = cutoff;
  return class_representation(g, encoder_forward(g, cfg, ops::concat(g, {z0, p0}, 0), enc).tokens);
}

Tensor vpt_shallow_forward(const Tensor& image, const ViTWeights& weights, const Tensor& prompts) {
  if (prompts.rank() != 2 || prompts.dim(1) != weights.config.dim || prompts.dim(0) == 0) {
    throw ShapeError("vpt_shallow: prompts have dims " + to_string(prompts.dims()));
  }
  ParamStore store;
  store.add_all(weights.tensors, false);
  store.add(names::kPrompt0, prompts, true);
  Graph g(store, false);
  return g.value(vpt_shallow_graph(g, weights.config, image, prompts.dim(0)));
}

}  // namespace expres
