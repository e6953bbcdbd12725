#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/trainer.hpp"
#include "json.hpp"

namespace expres {

std::string EpisodeResult::to_json() const {
  nlohmann::ordered_json j;
  j["episode"] = episode;
  j["category"] = category;
  j["seed"] = seed;
  j["miou"] = miou;
  return j.dump();
}

std::string EpisodeSummary::to_json() const {
  nlohmann::ordered_json j;
  j["summary"] = true;
  j["episodes"] = episodes.size();
  j["mean_miou"] = mean_miou;
  j["dataset_miou"] = dataset_miou;
  return j.dump();
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("EXPRES_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EpisodeResult run_episode(const ViTWeights& weights, const Episode& episode, const EpisodeConfig& cfg) {
  const ViTConfig& vc = weights.config;
  const ResidualSiteConfig sites = cfg.residuals_enabled ? cfg.sites : ResidualSiteConfig::none();
  const PromptBank bank = init_prompts(sites, vc, cfg.prompts, derive_seed(episode.seed, "prompts"));
  ExpresOptions options;
  options.sites = sites;
  options.residuals_enabled = cfg.residuals_enabled;

  ParamStore store;
  store.add_all(weights.tensors, false);
  store.add_all(bank.to_tensors(), true);
  store.add_all(init_head(vc.dim, 2, 1, derive_seed(episode.seed, "head")), true);
  const std::vector<std::string> trainables = store.trainable_names();

  std::vector<Tensor> model_images;
  for (const LabeledImage& s : episode.support) model_images.push_back(resize_image(s.image, vc.image_size));

  EpisodeResult result;
  result.category = episode.category;
  result.seed = episode.seed;
  AdamState state;
  for (std::size_t step = 0; step < cfg.train.epochs; ++step) {
    Graph g(store);
    Var total;
    for (std::size_t i = 0; i < episode.support.size(); ++i) {
      const Tensor& mask = episode.support[i].mask;
      const Var logits =
          segment_logits(g, vc, model_images[i], mask.dim(0), mask.dim(1), cfg.prompts, options, cfg.feature);
      const Var l = dense_ce(g, logits, mask);
      total = total.valid() ? ops::add(g, total, l) : l;
    }
    const Var loss = ops::scale(g, total, 1.0f / static_cast<float>(episode.support.size()));
    const double value = g.value(loss)[0];
    if (step == 0) result.initial_loss = value;
    result.final_loss = value;
    TensorMap grads = g.gradient(loss, trainables);
    if (cfg.train.clip_norm > 0.0) clip_global_norm(grads, cfg.train.clip_norm);
    adamw_step(store, grads, state, lr_at_epoch(static_cast<double>(step), cfg.train), cfg.train);
  }

  TensorMap prompts, head;
  for (const auto& [name, t] : store.collect(true)) (name.rfind("head.", 0) == 0 ? head : prompts).emplace(name, t);
  const Tensor logits =
      segment_forward(episode.query.image, weights, PromptBank::from_tensors(prompts), head, options, cfg.feature);
  result.counts.add(predict_mask(logits), episode.query.mask);
  result.miou = result.counts.miou();
  return result;
}

EpisodeSummary run_episodes(const ViTWeights& weights, const SegmentationSet& data, std::size_t count,
                            std::uint64_t base_seed, const EpisodeConfig& cfg, std::size_t threads) {
  std::map<int, std::size_t> per_category;
  for (int c : data.categories) ++per_category[c];
  std::vector<int> eligible;
  for (const auto& [c, n] : per_category)
    if (n >= 6) eligible.push_back(c);
  if (eligible.empty()) throw ContractError("episodes: no category has >= 6 images");

  EpisodeSummary summary;
  summary.episodes.resize(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        const std::uint64_t seed = derive_seed(base_seed, "episode", i);
        const int category = eligible[derive_seed(base_seed, "episode-category", i) % eligible.size()];
        EpisodeResult r = run_episode(weights, sample_episode(data, category, seed), cfg);
        r.episode = i;
        summary.episodes[i] = std::move(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  IoUAccumulator pooled(2);
  double total = 0.0;
  for (const EpisodeResult& r : summary.episodes) {
    total += r.miou;
    pooled.merge(r.counts);
  }
  summary.mean_miou = count == 0 ? 0.0 : total / static_cast<double>(count);
  summary.dataset_miou = pooled.miou();
  return summary;
}

}  // namespace expres
