#include <cmath>
#include <numbers>

#include "expres/errors.hpp"
#include "expres/trainer.hpp"

namespace expres {

std::vector<std::string> TrainConfig::violations(const std::string& path) const {
  std::vector<std::string> errors;
  if (!(lr > 0.0) || !std::isfinite(lr)) errors.push_back(path + ".lr: must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) errors.push_back(path + ".weight_decay: must be >= 0");
  if (warmup_epochs > epochs) {
    errors.push_back(path + ".warmup_epochs: " + std::to_string(warmup_epochs) + " exceeds epochs = " +
                     std::to_string(epochs));
  }
  if (batch_size < 1) errors.push_back(path + ".batch_size: must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) errors.push_back(path + ".betas[0]: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) errors.push_back(path + ".betas[1]: must lie in [0, 1)");
  if (!(eps > 0.0)) errors.push_back(path + ".eps: must be > 0");
  if (!(clip_norm >= 0.0)) errors.push_back(path + ".clip_norm: must be >= 0");
  return errors;
}

double lr_schedule(double epoch_fraction, const TrainConfig& cfg) {
  return lr_at_epoch(epoch_fraction * static_cast<double>(cfg.epochs), cfg);
}

double lr_at_epoch(double epoch, const TrainConfig& cfg) {
  const auto total = static_cast<double>(cfg.epochs);
  const auto warm = static_cast<double>(cfg.warmup_epochs);
  if (epoch < warm) return cfg.lr * epoch / warm;
  if (total <= warm) return cfg.lr;
  const double progress = std::min(1.0, (epoch - warm) / (total - warm));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

bool decays(const std::string& name) {
  for (const char* suffix : {".b", ".b1", ".b2", ".g"}) {
    const std::string_view s(suffix);
    if (name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) return false;
  }
  return true;
}

double clip_global_norm(TensorMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (float v : g.values()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (float& v : g.values()) v = static_cast<float>(v * s);
  }
  return norm;
}

void adamw_step(ParamStore& store, const TensorMap& grads, AdamState& state, double lr, const TrainConfig& cfg) {
  const std::vector<std::string> names = store.trainable_names();
  for (const std::string& name : names) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adamw_step: no gradient for trainable '" + name + "'");
    if (it->second.dims() != store.value(name).dims()) {
      throw ShapeError("adamw_step: gradient for '" + name + "' has dims " + to_string(it->second.dims()));
    }
    if (!it->second.all_finite()) throw NumericError("adamw_step: non-finite gradient in '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const std::string& name : names) {
    const Tensor& g = grads.at(name);
    Tensor& p = store.mutable_value(name);
    AdamState::Moments& mo = state.moments[name];
    if (mo.m.empty()) {
      mo.m.assign(p.size(), 0.0);
      mo.v.assign(p.size(), 0.0);
    }
    const double shrink = decays(name) ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * gi;
      mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mo.m[i] / c1;
      const double vhat = mo.v[i] / c2;
      p[i] = static_cast<float>(static_cast<double>(p[i]) * shrink - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace expres
