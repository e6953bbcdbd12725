#include <algorithm>
#include <cmath>

#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/tasks.hpp"

namespace expres {

Var upsample_patch_logits(Graph& g, Var patch_logits, std::size_t out_h, std::size_t out_w) {
  const Dims& d = g.dims(patch_logits);
  if (d.size() != 2) g.shape_error("upsample", "per-patch logits must be [N,C], got " + to_string(d));
  const std::size_t n = d[0], c = d[1];
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ContractError("segment_forward: " + std::to_string(n) + " patch tokens do not form a square grid");
  }
  const Var planes = ops::reshape(g, ops::transpose(g, patch_logits), {c, side, side});
  return ops::bilinear_resize(g, planes, out_h, out_w);
}

Var segment_logits(Graph& g, const ViTConfig& cfg, const Tensor& model_image, std::size_t out_h, std::size_t out_w,
                   std::size_t prompts, const ExpresOptions& options, DenseFeature feature) {
  const ExpresGraph fwd = expres_graph(g, cfg, model_image, prompts, options);
  Graph::Scope scope(g, "segment");
  const Var features = fwd.encoder.dense(feature);
  const Var per_patch = apply_head(g, features, 1);
  return upsample_patch_logits(g, per_patch, out_h, out_w);
}

Tensor segment_forward(const Tensor& image, const ViTWeights& weights, const PromptBank& bank, const TensorMap& head,
                       const ExpresOptions& options, DenseFeature feature) {
  if (head.at("head.W").dim(1) != 2) throw ContractError("segment_forward: head must have C = 2");
  ParamStore store;
  store.add_all(weights.tensors, false);
  store.add_all(bank.to_tensors(), true);
  store.add_all(head, true);
  Graph g(store, false);
  const Tensor model_image = resize_image(image, weights.config.image_size);
  const Var logits =
      segment_logits(g, weights.config, model_image, image.dim(1), image.dim(2), bank.prompts(), options, feature);
  return g.value(logits);
}

namespace {

std::vector<int> mask_targets(const Tensor& mask, std::size_t classes) {
  std::vector<int> targets(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const float v = mask[i];
    const int t = static_cast<int>(v);
    if (static_cast<float>(t) != v || t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw ContractError("dense_ce: mask value " + std::to_string(v) + " outside {0.." + std::to_string(classes - 1) +
                          "}");
    }
    targets[i] = t;
  }
  return targets;
}

}  // namespace

Var dense_ce(Graph& g, Var logits, const Tensor& mask) {
  const Dims& d = g.dims(logits);
  if (d.size() != 3 || mask.rank() != 2 || mask.dim(0) != d[1] || mask.dim(1) != d[2]) {
    g.shape_error("dense_ce", "logits " + to_string(d) + " vs mask " + to_string(mask.dims()));
  }
  const std::vector<int> targets = mask_targets(mask, d[0]);
  Graph::Scope scope(g, "dense_ce");
  const Var per_pixel = ops::transpose(g, ops::reshape(g, logits, {d[0], d[1] * d[2]}));
  return ops::cross_entropy(g, per_pixel, targets);
}

float dense_ce(const Tensor& logits, const Tensor& mask) {
  Graph g;
  const Var l = g.constant(logits);
  return g.value(dense_ce(g, l, mask))[0];
}

Tensor predict_mask(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("predict_mask expects [C,H,W], got " + to_string(logits.dims()));
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  Tensor out({logits.dim(1), logits.dim(2)});
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits[k * hw + i] > logits[best * hw + i]) best = k;
    out[i] = static_cast<float>(best);
  }
  return out;
}

void IoUAccumulator::add(const Tensor& pred, const Tensor& truth) {
  if (pred.dims() != truth.dims()) {
    throw ShapeError("miou: prediction " + to_string(pred.dims()) + " vs truth " + to_string(truth.dims()));
  }
  const std::size_t classes = inter_.size();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = static_cast<std::size_t>(pred[i]);
    const auto t = static_cast<std::size_t>(truth[i]);
    if (p >= classes || t >= classes) throw ContractError("miou: label outside [0, classes)");
    if (p == t) {
      ++inter_[p];
      ++uni_[p];
    } else {
      ++uni_[p];
      ++uni_[t];
    }
  }
}

void IoUAccumulator::merge(const IoUAccumulator& other) {
  if (other.inter_.size() != inter_.size()) throw ShapeError("miou: merging accumulators with different class counts");
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    inter_[c] += other.inter_[c];
    uni_[c] += other.uni_[c];
  }
}

double IoUAccumulator::iou(std::size_t cls) const {
  return uni_[cls] == 0 ? 0.0 : static_cast<double>(inter_[cls]) / static_cast<double>(uni_[cls]);
}

double IoUAccumulator::miou() const {
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < inter_.size(); ++c) {
    if (uni_[c] == 0) continue;
    total += iou(c);
    ++present;
  }
  return present == 0 ? 1.0 : total / static_cast<double>(present);
}

double miou(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth, std::size_t classes) {
  if (pred.size() != truth.size()) throw ShapeError("miou: prediction and truth counts differ");
  IoUAccumulator acc(classes);
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i]);
  return acc.miou();
}

Episode sample_episode(const SegmentationSet& data, int category, std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.categories[i] == category) pool.push_back(i);
  if (pool.size() < 6) {
    throw ContractError("sample_episode: category " + std::to_string(category) + " has " +
                        std::to_string(pool.size()) + " images, need >= 6");
  }
  Rng rng(derive_seed(seed, "episode"));
  const auto order = rng.permutation(pool.size());
  auto make = [&](std::size_t idx) {
    LabeledImage li;
    li.index = idx;
    li.image = data.images[idx];
    const Tensor& labels = data.label_maps[idx];
    li.mask = Tensor(labels.dims());
    for (std::size_t p = 0; p < labels.size(); ++p) {
      li.mask[p] = static_cast<int>(labels[p]) == category + 1 ? 1.0f : 0.0f;
    }
    return li;
  };
  Episode ep;
  ep.category = category;
  ep.seed = seed;
  for (std::size_t k = 0; k < 5; ++k) ep.support.push_back(make(pool[order[k]]));
  ep.query = make(pool[order[5]]);
  return ep;
}

}  // namespace expres
