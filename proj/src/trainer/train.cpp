#include <algorithm>
#include <cmath>
#include <ostream>

#include "expres/archive.hpp"
#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/trainer.hpp"
#include "json.hpp"

namespace expres {
namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k)
    if (logits[row * c + k] > logits[row * c + best]) best = k;
  return best;
}

void check_dataset(const Adaptation& model, const ClassificationSet& data, const char* split) {
  if (data.size() == 0) throw ConfigError(std::string(split) + " dataset is empty");
  const ViTConfig& cfg = model.config;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Dims want{cfg.channels, cfg.image_size, cfg.image_size};
    if (data.images[i].dims() != want) {
      throw ShapeError(std::string(split) + " image " + std::to_string(i) + " has dims " +
                       to_string(data.images[i].dims()) + ", expected " + to_string(want));
    }
    if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= model.spec.num_classes) {
      throw ContractError(std::string(split) + " label " + std::to_string(data.labels[i]) + " of item " +
                          std::to_string(i) + " outside [0, " + std::to_string(model.spec.num_classes) + ")");
    }
  }
}

}  // namespace

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["loss"] = loss;
  j["metric"] = metric;
  return j.dump();
}

MetricsRecord evaluate(const Adaptation& model, const ClassificationSet& data, std::size_t batch_size) {
  check_dataset(model, data, "eval");
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<const Tensor*> imgs;
    std::vector<int> targets;
    for (std::size_t i = start; i < end; ++i) {
      imgs.push_back(&data.images[i]);
      targets.push_back(data.labels[i]);
    }
    Graph g(model.store, false);
    const Var logits = model.logits(g, imgs);
    const Var loss = ops::cross_entropy(g, logits, targets);
    loss_sum += static_cast<double>(g.value(loss)[0]) * static_cast<double>(end - start);
    for (std::size_t r = 0; r < end - start; ++r)
      if (argmax_row(g.value(logits), r) == static_cast<std::size_t>(targets[r])) ++correct;
  }
  MetricsRecord rec;
  rec.split = "eval";
  rec.loss = loss_sum / static_cast<double>(data.size());
  rec.metric = static_cast<double>(correct) / static_cast<double>(data.size());
  return rec;
}

TrainResult train_classifier(Adaptation& model, const ClassificationSet& train, const ClassificationSet* val,
                             const TrainConfig& cfg, std::ostream* log, const StepCallback& on_step) {
  if (const auto errors = cfg.violations(); !errors.empty()) throw ConfigError(errors.front());
  check_dataset(model, train, "train");
  if (val) check_dataset(model, *val, "val");

  TrainResult result;
  result.frozen_hash = content_hash(model.frozen());
  const std::vector<std::string> trainables = model.trainable_names();
  const std::size_t n = train.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  AdamState state;

  auto emit = [&](MetricsRecord rec) {
    if (log) *log << rec.to_json() << '\n' << std::flush;
    result.log.push_back(std::move(rec));
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "epoch-order", epoch));
    const std::vector<std::size_t> order = rng.permutation(n);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t start = b * cfg.batch_size, end = std::min(n, start + cfg.batch_size);
      std::vector<const Tensor*> imgs;
      std::vector<int> targets;
      for (std::size_t i = start; i < end; ++i) {
        imgs.push_back(&train.images[order[i]]);
        targets.push_back(train.labels[order[i]]);
      }
      const double lr = lr_at_epoch(static_cast<double>(epoch) + static_cast<double>(b) / batches, cfg);
      double batch_loss = 0.0;
      try {
        Graph g(model.store);
        const Var logits = model.logits(g, imgs);
        const Var loss = ops::cross_entropy(g, logits, targets);
        TensorMap grads = g.gradient(loss, trainables);
        if (cfg.clip_norm > 0.0) clip_global_norm(grads, cfg.clip_norm);
        adamw_step(model.store, grads, state, lr, cfg);
        batch_loss = g.value(loss)[0];
        for (std::size_t r = 0; r < imgs.size(); ++r)
          if (argmax_row(g.value(logits), r) == static_cast<std::size_t>(targets[r])) ++correct;
      } catch (const NumericError& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        return result;
      }
      loss_sum += batch_loss * static_cast<double>(imgs.size());
      if (on_step) on_step(result.steps, batch_loss);
      ++result.steps;
    }
    MetricsRecord rec;
    rec.epoch = epoch + 1;
    rec.split = "train";
    rec.loss = loss_sum / static_cast<double>(n);
    rec.metric = static_cast<double>(correct) / static_cast<double>(n);
    emit(rec);
    if (val) {
      MetricsRecord v = evaluate(model, *val, cfg.batch_size);
      v.epoch = epoch + 1;
      v.split = "val";
      emit(v);
    }
    if (content_hash(model.frozen()) != result.frozen_hash) {
      throw ContractError("frozen parameters changed during epoch " + std::to_string(epoch + 1));
    }
  }
  return result;
}

ViTWeights pretrain_backbone(const ViTConfig& cfg, const ClassificationSet& data, const TrainConfig& train,
                             float init_std, std::uint64_t seed) {
  ViTWeights weights = init_vit_weights(cfg, derive_seed(seed, "backbone-init"), init_std);
  if (train.epochs == 0) return weights;
  AdaptationSpec spec;
  spec.method = Method::FtAll;
  spec.num_classes = data.num_classes;
  Adaptation model = build_adaptation(spec, weights, derive_seed(seed, "pretrain"));
  const TrainResult r = train_classifier(model, data, nullptr, train);
  if (r.aborted) throw NumericError("backbone pretraining diverged: " + r.abort_reason);
  for (auto& [name, t] : weights.tensors) t = model.store.value(name);
  return weights;
}

}  // namespace expres
