#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "expres/archive.hpp"
#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/trainer.hpp"

using namespace expres;

namespace {

const ViTConfig kToy{8, 4, 8, 2, 2, 2, 1};

ClassificationSet random_set(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  ClassificationSet d;
  d.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    d.images.push_back(uniform_tensor({kToy.channels, kToy.image_size, kToy.image_size}, 0.0f, 1.0f, rng));
    d.labels.push_back(static_cast<int>(rng.index(classes)));
  }
  return d;
}

AdaptationSpec expres_spec(std::size_t classes, ResidualSiteConfig sites = ResidualSiteConfig::attention(2)) {
  AdaptationSpec s;
  s.method = Method::Expres;
  s.prompts = 2;
  s.num_classes = classes;
  s.sites = std::move(sites);
  return s;
}

ParamStore scalar_store(float p) {
  ParamStore s;
  s.add("w", Tensor::scalar(p), true);
  s.add("frozen", Tensor::scalar(3.0f), false);
  return s;
}

ResidualSiteConfig every_site(std::size_t layers) {
  ResidualSiteConfig c;
  for (std::size_t i = 0; i < kNumSites; ++i) c.sites.push_back(static_cast<ResidualSite>(i));
  c.start_layer = 0;
  c.end_layer = layers - 1;
  return c;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.lr = 0.004;
  c.epochs = 100;
  c.warmup_epochs = 10;
  CHECK(lr_at_epoch(0, c) == 0.0);
  CHECK(lr_at_epoch(5, c) == doctest::Approx(0.5 * c.lr).epsilon(1e-12));
  CHECK(lr_at_epoch(10, c) == c.lr);
  CHECK(lr_at_epoch(55, c) == doctest::Approx(c.lr * 0.5 * (1 + std::cos(std::numbers::pi * 45 / 90))).epsilon(1e-12));
  CHECK(lr_at_epoch(55, c) == doctest::Approx(0.5 * c.lr).epsilon(1e-12));
  CHECK(lr_at_epoch(100, c) == doctest::Approx(0.0).scale(1.0));
  CHECK(lr_schedule(0.55, c) == doctest::Approx(lr_at_epoch(55, c)).epsilon(1e-12));
  double prev = c.lr;
  for (int e = 10; e <= 100; ++e) {
    CHECK(lr_at_epoch(e, c) <= prev);
    prev = lr_at_epoch(e, c);
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK(c.violations().empty());
  c.warmup_epochs = 200;
  CHECK_FALSE(c.violations().empty());
  c = TrainConfig{};
  c.lr = 0.0;
  CHECK_FALSE(c.violations().empty());
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_FALSE(c.violations().empty());
}

TEST_CASE("weight decay exclusions") {
  CHECK(decays("prompt.P0"));
  CHECK(decays("prompt.d3.K"));
  CHECK(decays("head.W"));
  CHECK_FALSE(decays("head.b"));
  CHECK_FALSE(decays("layer0.ln1.g"));
  CHECK_FALSE(decays("layer1.mlp.b2"));
  CHECK_FALSE(decays("layer1.Wq.b"));
}

TEST_CASE("adamw_step") {
  TrainConfig c;
  SUBCASE("zero gradient without decay is the identity") {
    c.weight_decay = 0.0;
    ParamStore s = scalar_store(0.7f);
    AdamState st;
    for (int i = 0; i < 5; ++i) adamw_step(s, {{"w", Tensor::scalar(0.0f)}}, st, 0.1, c);
    CHECK(s.value("w")[0] == 0.7f);
    CHECK(st.step == 5);
  }
  SUBCASE("zero gradient with decay scales by 1 - lr wd") {
    c.weight_decay = 0.01;
    ParamStore s = scalar_store(0.7f);
    AdamState st;
    adamw_step(s, {{"w", Tensor::scalar(0.0f)}}, st, 0.1, c);
    CHECK(s.value("w")[0] == static_cast<float>(static_cast<double>(0.7f) * (1.0 - 0.1 * 0.01)));
  }
  SUBCASE("first step from p = 1, g = 1") {
    c.weight_decay = 0.0;
    ParamStore s = scalar_store(1.0f);
    AdamState st;
    adamw_step(s, {{"w", Tensor::scalar(1.0f)}}, st, 0.1, c);
    // m_hat = v_hat = 1 at t = 1
    CHECK(s.value("w")[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-7));
    CHECK(s.value("frozen")[0] == 3.0f);
  }
  SUBCASE("lr = 0 is the identity") {
    Rng rng(1);
    ParamStore s;
    s.add("a", trunc_normal_tensor({4, 3}, 1.0f, rng), true);
    s.add("b.b", trunc_normal_tensor({3}, 1.0f, rng), true);
    const TensorMap before = s.collect(true);
    AdamState st;
    for (int i = 0; i < 3; ++i)
      adamw_step(s, {{"a", trunc_normal_tensor({4, 3}, 1.0f, rng)}, {"b.b", trunc_normal_tensor({3}, 1.0f, rng)}}, st,
                 0.0, c);
    CHECK(content_hash(s.collect(true)) == content_hash(before));
  }
  SUBCASE("non-finite gradient names the tensor and changes nothing") {
    ParamStore s;
    s.add("a", Tensor::scalar(1.0f), true);
    s.add("z", Tensor::scalar(2.0f), true);
    AdamState st;
    try {
      adamw_step(s, {{"a", Tensor::scalar(0.5f)}, {"z", Tensor::scalar(NAN)}}, st, 0.1, c);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'z'") != std::string::npos);
    }
    CHECK(s.value("a")[0] == 1.0f);
    CHECK(st.step == 0);
    CHECK(st.moments.empty());
  }
  SUBCASE("missing gradient") {
    ParamStore s = scalar_store(1.0f);
    AdamState st;
    CHECK_THROWS_AS(adamw_step(s, {}, st, 0.1, c), ContractError);
  }
}

TEST_CASE("global-norm clipping") {
  TensorMap g{{"a", Tensor({2}, {3.0f, 0.0f})}, {"b", Tensor({1}, {4.0f})}};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g["a"][0] == doctest::Approx(0.6f));
  CHECK(g["b"][0] == doctest::Approx(0.8f));
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g["b"][0] == doctest::Approx(0.8f));
}

TEST_CASE("zero epochs keep the initialisation") {
  const ViTWeights w = init_vit_weights(kToy, 1, 0.2f);
  Adaptation a = build_adaptation(expres_spec(3), w, 5);
  const Adaptation fresh = build_adaptation(expres_spec(3), w, 5);
  TrainConfig c;
  c.epochs = 0;
  c.warmup_epochs = 0;
  const TrainResult r = train_classifier(a, random_set(6, 3, 2), nullptr, c);
  CHECK(r.steps == 0);
  CHECK(r.log.empty());
  for (const auto& [name, t] : fresh.trainables()) CHECK(a.store.value(name).bit_equal(t));
}

TEST_CASE("backbone hash is unchanged after 50 steps") {
  const ViTWeights w = init_vit_weights(kToy, 2, 0.2f);
  const std::string backbone = content_hash(w.tensors);
  Adaptation a = build_adaptation(expres_spec(3), w, 6);
  TrainConfig c;
  c.epochs = 25;
  c.warmup_epochs = 2;
  c.batch_size = 4;
  c.lr = 0.005;
  const TrainResult r = train_classifier(a, random_set(8, 3, 3), nullptr, c);
  CHECK(r.steps == 50);
  TensorMap after;
  for (const auto& [name, t] : w.tensors) after.emplace(name, a.store.value(name));
  CHECK(content_hash(after) == backbone);
  CHECK(content_hash(a.frozen()) == r.frozen_hash);
}

TEST_CASE("evaluate") {
  const ViTWeights base = init_vit_weights(kToy, 3, 0.3f);
  SUBCASE("twice gives the same record and leaves the model alone") {
    const Adaptation a = build_adaptation(expres_spec(3), base, 7);
    const ClassificationSet d = random_set(10, 3, 4);
    const std::string before = content_hash(a.store.collect(true)) + content_hash(a.store.collect(false));
    const MetricsRecord r1 = evaluate(a, d, 3), r2 = evaluate(a, d, 3);
    CHECK(r1.to_json() == r2.to_json());
    CHECK(content_hash(a.store.collect(true)) + content_hash(a.store.collect(false)) == before);
    CHECK(evaluate(a, d, 64).metric == r1.metric);
  }
  SUBCASE("memorising head scores 1.0 on its training set") {
    // One class per image; head column i is the representation of image i.
    // With identity final LayerNorm every y has norm sqrt(d), so y_i . y_i is the unique maximum.
    ViTWeights w = base;
    w.tensors["final_ln.g"] = Tensor({kToy.dim}, 1.0f);
    w.tensors["final_ln.b"] = Tensor::zeros({kToy.dim});
    const std::size_t n = 6;
    ClassificationSet d = random_set(n, n, 5);
    for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i);
    AdaptationSpec s = expres_spec(n);
    Adaptation a = build_adaptation(s, w, 8);
    Tensor head({kToy.dim, n});
    for (std::size_t i = 0; i < n; ++i) {
      Graph g(a.store, false);
      const Tensor y = g.value(a.representation(g, d.images[i]));
      for (std::size_t c = 0; c < kToy.dim; ++c) head.at(c, i) = y[c];
    }
    a.store.assign("head.W", head);
    a.store.assign("head.b", Tensor::zeros({n}));
    CHECK(evaluate(a, d).metric == 1.0);
  }
  SUBCASE("random 10-class predictor on 1000 samples") {
    AdaptationSpec s;
    s.method = Method::Linear;
    s.num_classes = 10;
    Adaptation a = build_adaptation(s, base, 9);
    Rng rng(10);
    a.store.assign("head.W", trunc_normal_tensor({kToy.dim, 10}, 1.0f, rng));
    const MetricsRecord r = evaluate(a, random_set(1000, 10, 11), 100);
    MESSAGE("random predictor accuracy " << r.metric);
    CHECK(r.metric >= 0.07);
    CHECK(r.metric <= 0.13);
  }
}

TEST_CASE("teacher-student training") {
  const ViTConfig cfg{16, 4, 16, 2, 2, 2, 3};
  const ViTWeights w = init_vit_weights(cfg, 5, 0.2f);
  const TeacherTask task = make_teacher_task(w, ResidualSiteConfig::attention(cfg.layers), 4, 64, 3, 0.5f, 12);
  AdaptationSpec s;
  s.method = Method::Expres;
  s.prompts = 4;
  s.num_classes = 3;
  s.sites = ResidualSiteConfig::attention(cfg.layers);
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 40;
  c.warmup_epochs = 3;
  c.batch_size = 16;
  c.seed = 3;

  SUBCASE("epoch loss is monotone over the first 10 epochs") {
    Adaptation a = build_adaptation(s, w, 13);
    TrainConfig shortrun = c;
    shortrun.epochs = 10;
    const TrainResult r = train_classifier(a, task.data, nullptr, shortrun);
    REQUIRE(r.log.size() == 10);
    int violations = 0;
    for (std::size_t e = 1; e < r.log.size(); ++e) violations += r.log[e].loss > r.log[e - 1].loss;
    CHECK(violations <= 1);
  }
  SUBCASE("identical runs are bit-identical") {
    Adaptation a = build_adaptation(s, w, 14), b = build_adaptation(s, w, 14);
    TrainConfig shortrun = c;
    shortrun.epochs = 3;
    std::ostringstream la, lb;
    train_classifier(a, task.data, &task.data, shortrun, &la);
    train_classifier(b, task.data, &task.data, shortrun, &lb);
    CHECK_FALSE(la.str().empty());
    CHECK(la.str() == lb.str());
    CHECK(content_hash(a.trainables()) == content_hash(b.trainables()));
  }
  SUBCASE("binary teacher splits at the median") {
    const TeacherTask bin = make_teacher_task(w, ResidualSiteConfig::attention(cfg.layers), 4, 64, 2, 0.5f, 15);
    int ones = 0;
    for (int l : bin.data.labels) ones += l;
    CHECK(ones == 32);
    const TeacherTask again = make_teacher_task(w, ResidualSiteConfig::attention(cfg.layers), 4, 64, 2, 0.5f, 15);
    CHECK(again.data.labels == bin.data.labels);
    CHECK(content_hash(again.bank.to_tensors()) == content_hash(bin.bank.to_tensors()));
  }
}

TEST_CASE("every residual receives gradient") {
  const ViTWeights w = init_vit_weights(kToy, 6, 0.3f);
  Adaptation a = build_adaptation(expres_spec(3, every_site(kToy.layers)), w, 15);
  Rng rng(16);
  a.store.assign("head.W", trunc_normal_tensor({kToy.dim, 3}, 1.0f, rng));
  const ClassificationSet d = random_set(4, 3, 17);
  std::vector<const Tensor*> imgs;
  for (const Tensor& t : d.images) imgs.push_back(&t);
  Graph g(a.store);
  const TensorMap grads = g.gradient(ops::cross_entropy(g, a.logits(g, imgs), d.labels), a.trainable_names());
  std::size_t residuals = 0;
  for (const auto& [name, gr] : grads) {
    if (!name.starts_with("prompt.")) continue;
    CAPTURE(name);
    double norm = 0.0;
    for (float v : gr.values()) norm += std::fabs(v);
    CHECK(norm > 0.0);
    residuals += name != "prompt.P0";
  }
  CHECK(residuals == kNumSites * kToy.layers);
}

TEST_CASE("non-finite loss aborts and keeps the last good state") {
  const ViTWeights w = init_vit_weights(kToy, 7, 0.2f);
  Adaptation a = build_adaptation(expres_spec(3), w, 18);
  ClassificationSet d = random_set(8, 3, 19);
  d.images[5].values()[3] = NAN;
  TrainConfig c;
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 1;
  c.lr = 0.01;
  TensorMap last_good = a.trainables();
  const TrainResult r = train_classifier(a, d, nullptr, c, nullptr, [&](std::size_t, double) {
    last_good = a.trainables();
  });
  CHECK(r.aborted);
  CHECK(r.abort_reason.find("non-finite") != std::string::npos);
  CHECK(r.steps < 8);
  CHECK(content_hash(a.trainables()) == content_hash(last_good));
  for (const auto& [name, t] : a.trainables()) CHECK(t.all_finite());
}

TEST_CASE("dataset problems surface before the first step") {
  const ViTWeights w = init_vit_weights(kToy, 8, 0.2f);
  Adaptation a = build_adaptation(expres_spec(3), w, 19);
  TrainConfig c;
  c.epochs = 1;
  c.warmup_epochs = 0;
  ClassificationSet d = random_set(4, 3, 20);
  d.labels[2] = 7;
  CHECK_THROWS_AS(train_classifier(a, d, nullptr, c), ContractError);
  d = random_set(4, 3, 20);
  d.images[1] = Tensor::zeros({1, 4, 4});
  CHECK_THROWS_AS(train_classifier(a, d, nullptr, c), ShapeError);
  CHECK_THROWS_AS(train_classifier(a, ClassificationSet{}, nullptr, c), ConfigError);
}

TEST_CASE("backbone pretraining") {
  const ClassificationSet d = random_set(8, 2, 21);
  TrainConfig c;
  c.epochs = 0;
  c.warmup_epochs = 0;
  const ViTWeights same = pretrain_backbone(kToy, d, c, 0.2f, 4);
  CHECK(content_hash(same.tensors) ==
        content_hash(init_vit_weights(kToy, derive_seed(4, "backbone-init"), 0.2f).tensors));
  c.epochs = 2;
  c.batch_size = 4;
  const ViTWeights moved = pretrain_backbone(kToy, d, c, 0.2f, 4);
  CHECK(content_hash(moved.tensors) != content_hash(same.tensors));
  CHECK(content_hash(pretrain_backbone(kToy, d, c, 0.2f, 4).tensors) == content_hash(moved.tensors));
}

TEST_CASE("episodes do not depend on the worker count") {
  const ViTConfig cfg{32, 8, 16, 2, 2, 2, 3};
  const ViTWeights w = init_vit_weights(cfg, 9, 0.2f);
  const SegmentationSet data = gen_synthetic_segmentation({24, 32, 3, 3}, 22);
  EpisodeConfig ec;
  ec.prompts = 2;
  ec.sites = ResidualSiteConfig::attention(cfg.layers);
  ec.train.lr = 0.05;
  ec.train.epochs = 5;
  ec.train.warmup_epochs = 1;
  const EpisodeSummary one = run_episodes(w, data, 5, 42, ec, 1);
  const EpisodeSummary three = run_episodes(w, data, 5, 42, ec, 3);
  REQUIRE(one.episodes.size() == 5);
  CHECK(one.to_json() == three.to_json());
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(one.episodes[i].episode == i);
    CHECK(one.episodes[i].to_json() == three.episodes[i].to_json());
    CHECK(one.episodes[i].miou >= 0.0);
    CHECK(one.episodes[i].miou <= 1.0);
    CHECK(one.episodes[i].final_loss < one.episodes[i].initial_loss);
  }
  double mean = 0.0;
  for (const auto& e : one.episodes) mean += e.miou;
  CHECK(one.mean_miou == doctest::Approx(mean / 5).epsilon(1e-12));
  const EpisodeSummary other = run_episodes(w, data, 5, 43, ec, 1);
  CHECK(other.to_json() != one.to_json());
}

TEST_CASE("single episode is reproducible") {
  const ViTConfig cfg{32, 8, 16, 2, 2, 2, 3};
  const ViTWeights w = init_vit_weights(cfg, 10, 0.2f);
  const SegmentationSet data = gen_synthetic_segmentation({12, 32, 2, 3}, 23);
  const Episode e = sample_episode(data, 1, 9);
  EpisodeConfig ec;
  ec.prompts = 2;
  ec.sites = ResidualSiteConfig::attention(cfg.layers);
  ec.train.epochs = 3;
  ec.train.warmup_epochs = 1;
  const EpisodeResult a = run_episode(w, e, ec), b = run_episode(w, e, ec);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.miou == b.miou);
}
