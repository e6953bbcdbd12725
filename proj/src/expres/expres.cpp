#include "expres/expres.hpp"

#include <cmath>
#include <limits>

#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"

namespace expres {

std::string names::residual(std::size_t layer, ResidualSite site) {
  return "prompt.d" + std::to_string(layer) + "." + site_name(site);
}

TensorMap PromptBank::to_tensors() const {
  TensorMap out;
  out.emplace(names::kPrompt0, p0);
  for (const auto& [key, t] : residuals) out.emplace(names::residual(key.first, key.second), t);
  return out;
}

PromptBank PromptBank::from_tensors(const TensorMap& tensors) {
  PromptBank bank;
  for (const auto& [name, t] : tensors) {
    if (name == names::kPrompt0) {
      bank.p0 = t;
      continue;
    }
    constexpr std::string_view prefix = "prompt.d";
    if (name.rfind(prefix, 0) != 0) continue;
    const auto dot = name.find('.', prefix.size());
    if (dot == std::string::npos) throw FormatError("malformed residual name '" + name + "'");
    const auto layer = std::stoul(name.substr(prefix.size(), dot - prefix.size()));
    const auto site = parse_site(std::string_view(name).substr(dot + 1));
    if (!site) throw FormatError("unknown residual site in '" + name + "'");
    bank.residuals.emplace(std::make_pair(static_cast<std::size_t>(layer), *site), t);
  }
  if (bank.p0.empty()) throw FormatError("prompt bank has no '" + std::string(names::kPrompt0) + "' entry");
  return bank;
}

std::size_t PromptBank::parameter_count() const {
  std::size_t n = p0.size();
  for (const auto& [key, t] : residuals) n += t.size();
  return n;
}

PromptBank init_prompts(const ResidualSiteConfig& sites, const ViTConfig& cfg, std::size_t prompts,
                        std::uint64_t seed) {
  if (prompts < 1) throw ContractError("init_prompts: M must be >= 1 (pooling over zero prompts is undefined)");
  std::vector<std::string> errors;
  sites.check(cfg.layers, "sites", errors);
  if (!errors.empty()) throw ContractError("init_prompts: " + errors.front());
  PromptBank bank;
  Rng rng(derive_seed(seed, "prompt-init"));
  bank.p0 = trunc_normal_tensor({prompts, cfg.dim}, 0.02f, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    if (!sites.covers(l)) continue;
    for (ResidualSite s : sites.sites) {
      bank.residuals.emplace(std::make_pair(l, s), Tensor::zeros({prompts, site_width(s, cfg)}));
    }
  }
  return bank;
}

ExpresGraph expres_graph(Graph& g, const ViTConfig& cfg, const Tensor& image, std::size_t prompts,
                         const ExpresOptions& options) {
  if (prompts < 1) throw ContractError("expres: M must be >= 1");
  const Var z0 = patchify_embed(g, cfg, image);
  const Var p0 = g.param(names::kPrompt0);
  if (g.dims(p0) != Dims{prompts, cfg.dim}) {
    throw ShapeError("expres: prompt.P0 has dims " + to_string(g.dims(p0)) + ", expected [" + std::to_string(prompts) +
                     "," + std::to_string(cfg.dim) + "]");
  }
  const Var tokens = ops::concat(g, {z0, p0}, 0);

  EncoderOptions enc;
  enc.prompts = prompts;
  enc.cutoff = options.cutoff;
  if (options.residuals_enabled && !options.sites.sites.empty()) {
    enc.residuals.resize(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      if (!options.sites.covers(l)) continue;
      for (ResidualSite s : options.sites.sites) {
        const Var delta = g.param(names::residual(l, s));
        const Dims want{prompts, site_width(s, cfg)};
        if (g.dims(delta) != want) {
          throw ShapeError("expres: " + names::residual(l, s) + " has dims " + to_string(g.dims(delta)) +
                           ", expected " + to_string(want));
        }
        enc.residuals[l][s] = delta;
      }
    }
  }
  ExpresGraph out;
  out.encoder = encoder_forward(g, cfg, tokens, enc);
  Graph::Scope scope(g, "readout");
  const Var pooled = ops::mean(g, out.encoder.prompts, 0);
  out.y = ops::layer_norm(g, pooled, g.param(names::kFinalG), g.param(names::kFinalB));
  return out;
}

Activations collect_activations(const Graph& g, const EncoderTrace& trace, std::size_t grid) {
  Activations a;
  a.tokens = trace.tokens;
  a.prompts = trace.prompts;
  a.grid = grid;
  for (const LayerTrace& lt : trace.layers) {
    LayerActivations la;
    la.normed = g.value(lt.normed);
    la.queries = g.value(lt.queries);
    la.keys_base = g.value(lt.keys_base);
    la.keys = g.value(lt.keys);
    la.values = g.value(lt.values);
    la.msa_out = g.value(lt.msa_out);
    la.h = g.value(lt.h);
    la.output = g.value(lt.output);
    for (Var v : lt.attention) la.attention.push_back(g.value(v));
    a.layers.push_back(std::move(la));
  }
  return a;
}

namespace {

ParamStore bank_store(const ViTWeights& weights, const PromptBank& bank) {
  ParamStore store;
  store.add_all(weights.tensors, false);
  store.add_all(bank.to_tensors(), true);
  return store;
}

}  // namespace

ExpresResult expres_forward(const Tensor& image, const ViTWeights& weights, const PromptBank& bank,
                            const ExpresOptions& options) {
  const ViTConfig& cfg = weights.config;
  if (bank.p0.rank() != 2 || bank.p0.dim(1) != cfg.dim) {
    throw ShapeError("expres_forward: bank width " + to_string(bank.p0.dims()) + " does not match d=" +
                     std::to_string(cfg.dim));
  }
  const ParamStore store = bank_store(weights, bank);
  Graph g(store, false);
  ExpresGraph fwd;
  try {
    fwd = expres_graph(g, cfg, image, bank.prompts(), options);
  } catch (const NumericError& e) {
    throw NumericError(std::string("expres_forward: ") + e.what());
  }
  ExpresResult r;
  r.y = g.value(fwd.y);
  r.prompts_out = g.value(fwd.encoder.prompts);
  r.tokens_out = g.value(fwd.encoder.tokens);
  r.activations = collect_activations(g, fwd.encoder.trace, cfg.grid());
  return r;
}

float verify_reweighting(const ViTWeights& weights, const PromptBank& bank, const Tensor& image,
                         const ExpresOptions& options) {
  if (!options.sites.enabled(ResidualSite::K)) {
    throw ContractError("verify_reweighting: residual site K must be enabled");
  }
  ExpresOptions opts = options;
  opts.cutoff.reset();
  const ExpresResult r = expres_forward(image, weights, bank, opts);
  const ViTConfig& cfg = weights.config;
  const std::size_t t = r.activations.tokens, m = r.activations.prompts, dh = cfg.head_dim();
  const std::size_t first_prompt = t - m;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double worst = 0.0;
  std::vector<double> w(t);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerActivations& la = r.activations.layers[l];
    const Tensor* delta = nullptr;
    if (opts.residuals_enabled) {
      auto it = bank.residuals.find({l, ResidualSite::K});
      if (it != bank.residuals.end()) delta = &it->second;
    }
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < t; ++i) {
        // (b): base softmax over un-prompted keys, times alpha, renormalised.
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < t; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            s += static_cast<double>(la.queries.at(i, c0 + c)) * la.keys_base.at(j, c0 + c);
          }
          w[j] = s * inv_scale;
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          w[j] = std::exp(w[j] - mx);
          z += w[j];
        }
        double zt = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          w[j] /= z;
          if (delta && j >= first_prompt) {
            double qd = 0.0;
            for (std::size_t c = 0; c < dh; ++c) {
              qd += static_cast<double>(la.queries.at(i, c0 + c)) * delta->at(j - first_prompt, c0 + c);
            }
            w[j] *= std::exp(qd * inv_scale);
          }
          zt += w[j];
        }
        // (a): attention actually computed by the forward pass.
        for (std::size_t j = 0; j < t; ++j) {
          worst = std::max(worst, std::fabs(static_cast<double>(la.attention[h].at(i, j)) - w[j] / zt));
        }
      }
    }
  }
  return static_cast<float>(worst);
}

Tensor dump_prompt_attention(const Activations& activations, std::size_t prompt_index, std::size_t layer) {
  if (layer >= activations.layers.size()) {
    throw ContractError("dump_prompt_attention: layer " + std::to_string(layer) + " outside [0, " +
                        std::to_string(activations.layers.size()) + ")");
  }
  if (prompt_index >= activations.prompts) {
    throw ContractError("dump_prompt_attention: prompt " + std::to_string(prompt_index) + " outside [0, " +
                        std::to_string(activations.prompts) + ")");
  }
  const auto& heads = activations.layers[layer].attention;
  const std::size_t g = activations.grid, n = g * g;
  const std::size_t row = activations.tokens - activations.prompts + prompt_index;
  std::vector<double> acc(n, 0.0);
  for (const Tensor& a : heads)
    for (std::size_t j = 0; j < n; ++j) acc[j] += a.at(row, 1 + j);
  double total = 0.0;
  for (double v : acc) total += v;
  Tensor out({g, g});
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(total > 0.0 ? acc[j] / total : 1.0 / n);
  return out;
}

}  // namespace expres
