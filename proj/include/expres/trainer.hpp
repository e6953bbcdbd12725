#pragma once

// AdamW with warmup + cosine schedule, deterministic batching, metric logs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "expres/baselines.hpp"
#include "expres/tasks.hpp"

namespace expres {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 10;
  std::size_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;

  std::vector<std::string> violations(const std::string& path = "train") const;
};

// Learning rate at a fraction of the run in [0, 1].
double lr_schedule(double epoch_fraction, const TrainConfig& cfg);
// Same schedule indexed by (possibly fractional) epoch.
double lr_at_epoch(double epoch, const TrainConfig& cfg);

// Weight decay applies to everything except biases and LayerNorm gains.
bool decays(const std::string& name);

struct AdamState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;
};

// One decoupled-weight-decay Adam update of every trainable tensor in `store`.
// Frozen tensors are never touched. Non-finite gradients raise NumericError
// naming the tensor before anything is modified.
void adamw_step(ParamStore& store, const TensorMap& grads, AdamState& state, double lr, const TrainConfig& cfg);

// Scales `grads` in place so that their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(TensorMap& grads, double max_norm);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double metric = 0.0;
  std::string to_json() const;
};

struct TrainResult {
  std::vector<MetricsRecord> log;
  std::size_t steps = 0;
  bool aborted = false;
  std::string abort_reason;
  std::string frozen_hash;  // content hash of every non-trainable tensor
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Mini-batch training of `model` on `train`; per epoch a seeded permutation
// fixes the batch order (last partial batch kept). Appends one train record per
// epoch, plus a val record when `val` is given. The frozen partition is hashed
// before training and after every epoch; a change is a ContractError. A
// non-finite loss or gradient stops training with the last good trainables kept.
TrainResult train_classifier(Adaptation& model, const ClassificationSet& train, const ClassificationSet* val,
                             const TrainConfig& cfg, std::ostream* log = nullptr, const StepCallback& on_step = {});

// Toy backbone checkpoint: initialise with `init_std`, then fully fine-tune on
// `data` (a class token classifier) and return the encoder weights.
ViTWeights pretrain_backbone(const ViTConfig& cfg, const ClassificationSet& data, const TrainConfig& train,
                             float init_std, std::uint64_t seed);

// Mean cross-entropy and accuracy; the model is not modified.
MetricsRecord evaluate(const Adaptation& model, const ClassificationSet& data, std::size_t batch_size = 64);

// ---------------------------------------------------------------------------
// Few-shot segmentation episodes

struct EpisodeConfig {
  std::size_t prompts = 10;
  ResidualSiteConfig sites;
  bool residuals_enabled = true;
  DenseFeature feature = DenseFeature::Keys;
  TrainConfig train;  // epochs = inner full-batch steps
};

struct EpisodeResult {
  std::size_t episode = 0;
  int category = 0;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  IoUAccumulator counts{2};
  std::string to_json() const;
};

// Fresh prompts and C = 2 head fitted on the five supports, evaluated on the query.
EpisodeResult run_episode(const ViTWeights& weights, const Episode& episode, const EpisodeConfig& cfg);

struct EpisodeSummary {
  std::vector<EpisodeResult> episodes;  // in episode order
  double mean_miou = 0.0;               // mean of per-episode mIoU
  double dataset_miou = 0.0;            // IoU of counts pooled over all queries
  std::string to_json() const;
};

// Episode i uses seed derive_seed(base_seed, "episode", i) and a category drawn
// from it among categories with >= 6 images. Runs on up to `threads` workers;
// results do not depend on the thread count.
EpisodeSummary run_episodes(const ViTWeights& weights, const SegmentationSet& data, std::size_t count,
                            std::uint64_t base_seed, const EpisodeConfig& cfg, std::size_t threads);

// EXPRES_THREADS if set, else hardware concurrency (at least 1).
std::size_t worker_threads();

}  // namespace expres
