#include "expres/vit.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "expres/archive.hpp"
#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"

namespace expres {

void ViTConfig::validate() const {
  std::vector<std::string> bad;
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    bad.push_back("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                  std::to_string(patch_size));
  }
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    bad.push_back("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (layers == 0) bad.push_back("layers must be >= 1");
  if (mlp_ratio == 0) bad.push_back("mlp_ratio must be >= 1");
  if (channels == 0) bad.push_back("channels must be >= 1");
  if (!bad.empty()) {
    std::string msg = "invalid ViT config:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw ContractError(msg);
  }
}

ViTConfig ViTConfig::vit_b16() { return ViTConfig{224, 16, 768, 12, 12, 4, 3}; }

std::string names::layer(std::size_t i, const char* suffix) { return "layer" + std::to_string(i) + "." + suffix; }

std::map<std::string, Dims> vit_param_shapes(const ViTConfig& cfg) {
  const std::size_t d = cfg.dim, h = cfg.hidden();
  std::map<std::string, Dims> s;
  s[names::kPatchW] = {cfg.patch_dim(), d};
  s[names::kPatchB] = {d};
  s[names::kCls] = {d};
  s[names::kPos] = {cfg.num_patches() + 1, d};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    s[names::layer(l, "ln1.g")] = {d};
    s[names::layer(l, "ln1.b")] = {d};
    for (const char* w : {"Wq", "Wk", "Wv", "Wproj"}) {
      s[names::layer(l, w)] = {d, d};
      s[names::layer(l, (std::string(w) + ".b").c_str())] = {d};
    }
    s[names::layer(l, "ln2.g")] = {d};
    s[names::layer(l, "ln2.b")] = {d};
    s[names::layer(l, "mlp.W1")] = {d, h};
    s[names::layer(l, "mlp.b1")] = {h};
    s[names::layer(l, "mlp.W2")] = {h, d};
    s[names::layer(l, "mlp.b2")] = {d};
  }
  s[names::kFinalG] = {d};
  s[names::kFinalB] = {d};
  return s;
}

std::size_t vit_param_count(const ViTConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, dims] : vit_param_shapes(cfg)) n += product(dims);
  return n;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ViTWeights init_vit_weights(const ViTConfig& cfg, std::uint64_t seed, float std) {
  cfg.validate();
  ViTWeights w{cfg, {}};
  Rng rng(derive_seed(seed, "vit-init"));
  for (const auto& [name, dims] : vit_param_shapes(cfg)) {
    Tensor t;
    if (ends_with(name, ".g")) {
      t = Tensor(dims, 1.0f);
    } else if (dims.size() == 1 && name != names::kCls) {
      t = Tensor::zeros(dims);
    } else {
      t = trunc_normal_tensor(dims, std, rng);
    }
    w.tensors.emplace(name, std::move(t));
  }
  return w;
}

void validate_weights(const TensorMap& tensors, const ViTConfig& cfg) {
  const auto shapes = vit_param_shapes(cfg);
  std::vector<std::string> missing, extra, misshaped;
  for (const auto& [name, dims] : shapes) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      missing.push_back(name);
    } else if (it->second.dims() != dims) {
      misshaped.push_back(name + " " + to_string(it->second.dims()) + " (expected " + to_string(dims) + ")");
    }
  }
  for (const auto& [name, t] : tensors) {
    if (!shapes.count(name)) extra.push_back(name);
  }
  if (missing.empty() && extra.empty() && misshaped.empty()) return;
  std::ostringstream os;
  os << "checkpoint does not match ViT config";
  auto list = [&os](const char* what, const std::vector<std::string>& items) {
    if (items.empty()) return;
    os << "; " << what << ":";
    for (const auto& s : items) os << ' ' << s;
  };
  list("missing", missing);
  list("unexpected", extra);
  list("mis-shaped", misshaped);
  throw FormatError(os.str());
}

void save_checkpoint(const ViTWeights& weights, const std::filesystem::path& path) {
  validate_weights(weights.tensors, weights.config);
  save_archive(path, weights.tensors);
}

ViTWeights load_checkpoint(const std::filesystem::path& path, const ViTConfig& cfg) {
  cfg.validate();
  TensorMap tensors = load_archive(path);
  validate_weights(tensors, cfg);
  return ViTWeights{cfg, std::move(tensors)};
}

ViTWeights adapt_to_resolution(const ViTWeights& weights, std::size_t image_size) {
  ViTConfig cfg = weights.config;
  cfg.image_size = image_size;
  cfg.validate();
  ViTWeights out = weights;
  out.config = cfg;
  out.tensors[names::kPos] = interpolate_pos_embed(weights.tensors.at(names::kPos), cfg.grid());
  return out;
}

const char* site_name(ResidualSite site) {
  switch (site) {
    case ResidualSite::LN: return "LN";
    case ResidualSite::Q: return "Q";
    case ResidualSite::K: return "K";
    case ResidualSite::V: return "V";
    case ResidualSite::Proj: return "proj";
    case ResidualSite::LNMlp: return "LN_mlp";
    case ResidualSite::L1Mlp: return "L1_mlp";
    case ResidualSite::L2Mlp: return "L2_mlp";
  }
  return "?";
}

std::optional<ResidualSite> parse_site(std::string_view name) {
  for (std::size_t i = 0; i < kNumSites; ++i) {
    const auto s = static_cast<ResidualSite>(i);
    if (name == site_name(s)) return s;
  }
  return std::nullopt;
}

std::size_t site_width(ResidualSite site, const ViTConfig& cfg) {
  return site == ResidualSite::L1Mlp ? cfg.hidden() : cfg.dim;
}

bool ResidualSet::any() const {
  for (const Var& v : site)
    if (v.valid()) return true;
  return false;
}

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3 || p == 0 || image.dim(1) % p != 0 || image.dim(2) % p != 0) {
    throw ShapeError("patchify: image " + to_string(image.dims()) + " with patch " + std::to_string(p));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t gy = h / p, gx = w / p;
  Tensor out({gy * gx, c * p * p});
  for (std::size_t py = 0; py < gy; ++py) {
    for (std::size_t px = 0; px < gx; ++px) {
      float* row = out.data() + (py * gx + px) * c * p * p;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            row[(ch * p + y) * p + x] = image[(ch * h + py * p + y) * w + px * p + x];
    }
  }
  return out;
}

Var patchify_embed(Graph& g, const ViTConfig& cfg, const Tensor& image) {
  const Dims want{cfg.channels, cfg.image_size, cfg.image_size};
  if (image.dims() != want) {
    throw ShapeError("patchify_embed: image dims " + to_string(image.dims()) + ", expected " + to_string(want));
  }
  Graph::Scope scope(g, "embed");
  const Var patches = g.constant(patchify(image, cfg.patch_size));
  const Var proj = ops::add_bias(g, ops::matmul(g, patches, g.param(names::kPatchW)), g.param(names::kPatchB));
  const Var cls = ops::reshape(g, g.param(names::kCls), {1, cfg.dim});
  return ops::add(g, ops::concat(g, {cls, proj}, 0), g.param(names::kPos));
}

Tensor interpolate_pos_embed(const Tensor& pos, std::size_t new_grid) {
  if (pos.rank() != 2 || pos.dim(0) < 2) throw ShapeError("interpolate_pos_embed: pos dims " + to_string(pos.dims()));
  const std::size_t n = pos.dim(0) - 1, d = pos.dim(1);
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) {
    throw ContractError("interpolate_pos_embed: " + std::to_string(n) + " patch rows is not a square grid");
  }
  if (new_grid == 0) throw ContractError("interpolate_pos_embed: new grid must be positive");
  // rows -> [d, g, g] channel planes
  Tensor planes({d, g, g});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) planes[c * n + i] = pos[(i + 1) * d + c];
  const Tensor resized = bilinear_resize(planes, new_grid, new_grid);
  const std::size_t n2 = new_grid * new_grid;
  Tensor out({n2 + 1, d});
  for (std::size_t c = 0; c < d; ++c) out[c] = pos[c];
  for (std::size_t i = 0; i < n2; ++i)
    for (std::size_t c = 0; c < d; ++c) out[(i + 1) * d + c] = resized[c * n2 + i];
  return out;
}

Tensor isolation_mask(std::size_t tokens, std::size_t prompts) {
  const float ninf = -std::numeric_limits<float>::infinity();
  Tensor mask({tokens, tokens});
  const std::size_t first_prompt = tokens - prompts;
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t j = 0; j < tokens; ++j) {
      const bool pi = i >= first_prompt, pj = j >= first_prompt;
      if ((pi || pj) && i != j) mask[i * tokens + j] = ninf;
    }
  }
  return mask;
}

namespace {

// x + [0 || delta]: residual added on the last `prompts` rows only.
Var add_at_prompts(Graph& g, Var x, Var delta, std::size_t prompts) {
  const Dims& xd = g.dims(x);
  const Dims& dd = g.dims(delta);
  if (dd.size() != 2 || dd[0] != prompts || dd[1] != xd[1] || prompts >= xd[0]) {
    g.shape_error("residual", "residual dims " + to_string(dd) + " do not fit activations " + to_string(xd) + " with " +
                                  std::to_string(prompts) + " prompts");
  }
  const Var pad = g.constant(Tensor::zeros({xd[0] - prompts, xd[1]}));
  return ops::add(g, x, ops::concat(g, {pad, delta}, 0));
}

Var maybe_residual(Graph& g, Var x, const ResidualSet* residuals, ResidualSite site, std::size_t prompts) {
  if (!residuals) return x;
  const Var delta = (*residuals)[site];
  if (!delta.valid()) return x;
  Graph::Scope scope(g, site_name(site));
  return add_at_prompts(g, x, delta, prompts);
}

Var linear(Graph& g, Var x, const std::string& w, const std::string& b) {
  return ops::add_bias(g, ops::matmul(g, x, g.param(w)), g.param(b));
}

}  // namespace

Var msa_block(Graph& g, const ViTConfig& cfg, std::size_t layer, Var z, const ResidualSet* residuals,
              std::size_t prompts, const Tensor* mask, LayerTrace* trace) {
  Graph::Scope scope(g, "layer" + std::to_string(layer) + "/msa");
  const Dims& zd = g.dims(z);
  if (zd.size() != 2 || zd[1] != cfg.dim || zd[0] == 0) {
    g.shape_error("msa_block", "input " + to_string(zd) + " for d=" + std::to_string(cfg.dim));
  }
  if (residuals && residuals->any() && prompts >= zd[0]) {
    throw ShapeError("msa_block: " + std::to_string(prompts) + " prompts leave no room in " + std::to_string(zd[0]) +
                     " tokens");
  }
  const std::size_t t = zd[0];
  const std::size_t dh = cfg.head_dim();
  auto name = [layer](const char* s) { return names::layer(layer, s); };

  Var normed = ops::layer_norm(g, z, g.param(name("ln1.g")), g.param(name("ln1.b")));
  normed = maybe_residual(g, normed, residuals, ResidualSite::LN, prompts);
  const Var q = maybe_residual(g, linear(g, normed, name("Wq"), name("Wq.b")), residuals, ResidualSite::Q, prompts);
  const Var k_base = linear(g, normed, name("Wk"), name("Wk.b"));
  const Var k = maybe_residual(g, k_base, residuals, ResidualSite::K, prompts);
  const Var v = maybe_residual(g, linear(g, normed, name("Wv"), name("Wv.b")), residuals, ResidualSite::V, prompts);

  const std::vector<std::size_t> head_sizes(cfg.heads, dh);
  const auto qh = ops::split(g, q, 1, head_sizes);
  const auto kh = ops::split(g, k, 1, head_sizes);
  const auto vh = ops::split(g, v, 1, head_sizes);
  if (mask && mask->dims() != Dims{t, t}) {
    throw ShapeError("msa_block: mask " + to_string(mask->dims()) + " for " + std::to_string(t) + " tokens");
  }
  const float temperature = std::sqrt(static_cast<float>(dh));
  std::vector<Var> heads, attention;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Graph::Scope hs(g, "head" + std::to_string(h));
    const Var scores = ops::matmul(g, qh[h], ops::transpose(g, kh[h]));
    const Var att = ops::softmax(g, scores, temperature, mask);
    attention.push_back(att);
    heads.push_back(ops::matmul(g, att, vh[h]));
  }
  const Var merged = heads.size() == 1 ? heads[0] : ops::concat(g, heads, 1);
  const Var o = maybe_residual(g, linear(g, merged, name("Wproj"), name("Wproj.b")), residuals, ResidualSite::Proj,
                               prompts);
  const Var h = ops::add(g, o, z);
  if (trace) {
    trace->input = z;
    trace->normed = normed;
    trace->queries = q;
    trace->keys_base = k_base;
    trace->keys = k;
    trace->values = v;
    trace->attention = std::move(attention);
    trace->msa_out = o;
    trace->h = h;
  }
  return h;
}

Var mlp_block(Graph& g, const ViTConfig& cfg, std::size_t layer, Var h, const ResidualSet* residuals,
              std::size_t prompts, LayerTrace* trace) {
  Graph::Scope scope(g, "layer" + std::to_string(layer) + "/mlp");
  auto name = [layer](const char* s) { return names::layer(layer, s); };
  (void)cfg;
  Var u = ops::layer_norm(g, h, g.param(name("ln2.g")), g.param(name("ln2.b")));
  u = maybe_residual(g, u, residuals, ResidualSite::LNMlp, prompts);
  Var a = maybe_residual(g, linear(g, u, name("mlp.W1"), name("mlp.b1")), residuals, ResidualSite::L1Mlp, prompts);
  a = ops::gelu(g, a);
  const Var out = maybe_residual(g, linear(g, a, name("mlp.W2"), name("mlp.b2")), residuals, ResidualSite::L2Mlp,
                                 prompts);
  const Var z = ops::add(g, out, h);
  if (trace) {
    trace->mlp_out = out;
    trace->output = z;
  }
  return z;
}

Var EncoderOutput::dense(DenseFeature f) const {
  switch (f) {
    case DenseFeature::Keys: return patch_keys;
    case DenseFeature::Queries: return patch_queries;
    case DenseFeature::Mlp: return patch_mlp;
  }
  return patch_keys;
}

EncoderOutput encoder_forward(Graph& g, const ViTConfig& cfg, Var tokens, const EncoderOptions& options) {
  const Dims& td = g.dims(tokens);
  const std::size_t n = cfg.num_patches();
  const std::size_t m = options.prompts;
  if (td.size() != 2 || td[0] != n + 1 + m || td[1] != cfg.dim) {
    g.shape_error("encoder", "tokens " + to_string(td) + ", expected [" + std::to_string(n + 1 + m) + "," +
                                 std::to_string(cfg.dim) + "]");
  }
  if (options.cutoff && *options.cutoff > cfg.layers) {
    throw ContractError("propagation cutoff " + std::to_string(*options.cutoff) + " outside [0, " +
                        std::to_string(cfg.layers) + "]");
  }
  if (!options.residuals.empty() && options.residuals.size() != cfg.layers) {
    throw ContractError("residual banks: expected " + std::to_string(cfg.layers) + " layers, got " +
                        std::to_string(options.residuals.size()));
  }
  const std::size_t t = td[0];
  std::optional<Tensor> mask;
  if (options.cutoff && *options.cutoff < cfg.layers && m > 0) mask = isolation_mask(t, m);

  EncoderOutput out;
  out.trace.tokens = t;
  out.trace.prompts = m;
  out.trace.layers.resize(cfg.layers);
  Var z = tokens;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    if (l > 0 && options.layer_input) z = options.layer_input(g, l, z);
    const ResidualSet* res = options.residuals.empty() ? nullptr : &options.residuals[l];
    const Tensor* layer_mask = (mask && l >= *options.cutoff) ? &*mask : nullptr;
    LayerTrace& tr = out.trace.layers[l];
    const Var h = msa_block(g, cfg, l, z, res, m, layer_mask, &tr);
    z = mlp_block(g, cfg, l, h, res, m, &tr);
  }
  Graph::Scope scope(g, "chunk");
  if (m > 0) {
    const auto parts = ops::split(g, z, 0, {n + 1, m});
    out.tokens = parts[0];
    out.prompts = parts[1];
  } else {
    out.tokens = z;
  }
  const LayerTrace& last = out.trace.layers.back();
  out.patch_keys = ops::slice(g, last.keys, 0, 1, n);
  out.patch_queries = ops::slice(g, last.queries, 0, 1, n);
  out.patch_mlp = ops::slice(g, last.mlp_out, 0, 1, n);
  return out;
}

Var class_representation(Graph& g, Var tokens) {
  Graph::Scope scope(g, "readout");
  const std::size_t d = g.dims(tokens)[1];
  const Var cls = ops::reshape(g, ops::slice(g, tokens, 0, 0, 1), {d});
  return ops::layer_norm(g, cls, g.param(names::kFinalG), g.param(names::kFinalB));
}

Tensor vit_forward(const ViTWeights& weights, const Tensor& image) {
  ParamStore store;
  store.add_all(weights.tensors, false);
  Graph g(store, false);
  const Var tokens = patchify_embed(g, weights.config, image);
  const EncoderOutput enc = encoder_forward(g, weights.config, tokens, {});
  return g.value(class_representation(g, enc.tokens));
}

}  // namespace expres
