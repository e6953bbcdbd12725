#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "expres/archive.hpp"
#include "expres/cli.hpp"
#include "expres/config.hpp"
#include "expres/cost.hpp"
#include "expres/gradcheck.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"

namespace expres {
namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string prompts;  // --M list
  std::optional<std::size_t> cutoff;
  std::string sites;
  std::string trainables;
  std::size_t image = 0;
  float eps = 1e-3f;
  // account
  std::string vit = "vitb16";
  std::size_t classes = 100;
  std::size_t k = 1;
};

std::vector<std::size_t> parse_uint_list(const std::string& csv, const char* flag) {
  std::vector<std::size_t> out;
  std::vector<std::string> errors;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.front() == '-') {
      errors.push_back(std::string(flag) + ": '" + item + "' is not a non-negative integer");
    } else {
      out.push_back(static_cast<std::size_t>(v));
    }
  }
  if (!errors.empty()) throw ConfigError(errors);
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

// Cells use the JSON number formatting so CSV and JSON carry identical digits.
std::string cell(const ojson& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<ojson>> rows;

  ojson to_json() const {
    ojson arr = ojson::array();
    for (const auto& row : rows) {
      ojson o;
      for (std::size_t c = 0; c < columns.size(); ++c) o[columns[c]] = row[c];
      arr.push_back(o);
    }
    return arr;
  }
  std::string to_csv() const {
    std::ostringstream os;
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << cell(row[c]);
      os << '\n';
    }
    return os.str();
  }
  void print(std::ostream& os) const {
    std::vector<std::size_t> width(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
      width[c] = columns[c].size();
      for (const auto& row : rows) width[c] = std::max(width[c], cell(row[c]).size());
    }
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "  " : "") << std::setw(width[c]) << columns[c];
    os << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "  " : "") << std::setw(width[c]) << cell(row[c]);
      os << '\n';
    }
  }
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

void emit_table(const Table& t, const fs::path& dir, const std::string& stem, std::ostream& out) {
  write_file(dir / (stem + ".csv"), t.to_csv());
  write_file(dir / (stem + ".json"), t.to_json().dump(2) + "\n");
  t.print(out);
}

fs::path prepare_out(const std::string& dir) {
  const fs::path p(dir.empty() ? "out" : dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

RunConfig load_config(const Flags& f) {
  if (f.config.empty()) throw ConfigError("--config: required");
  RunConfig cfg = parse_config(f.config);
  if (!f.out.empty()) cfg.out = f.out;
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = derive_seed(cfg.seed, "train");
  }
  if (f.cutoff) cfg.adaptation.cutoff = *f.cutoff;
  if (!f.sites.empty()) cfg.adaptation.sites.sites = parse_site_list(f.sites);
  if (const auto errors = cfg.violations(); !errors.empty()) throw ConfigError(errors);
  return cfg;
}

struct Backbone {
  ViTWeights weights;
  std::string hash;
};

Backbone make_backbone(const RunConfig& cfg) {
  Backbone b;
  if (cfg.backbone.checkpoint) {
    b.weights = load_checkpoint(*cfg.backbone.checkpoint, cfg.vit);
    b.hash = file_hash(*cfg.backbone.checkpoint);
    return b;
  }
  TrainConfig pre;
  pre.epochs = cfg.backbone.pretrain_epochs;
  pre.warmup_epochs = std::min<std::size_t>(1, pre.epochs);
  pre.lr = 1e-3;
  pre.batch_size = 16;
  pre.seed = derive_seed(cfg.seed, "pretrain-order");
  ClassificationSet shapes;
  if (pre.epochs > 0) {
    const SegmentationSet seg = gen_synthetic_segmentation(
        {128, cfg.vit.image_size, std::max<std::size_t>(cfg.data.categories, 2), cfg.vit.channels},
        derive_seed(cfg.seed, "pretrain-data"));
    shapes.images = seg.images;
    shapes.labels = seg.categories;
    shapes.num_classes = seg.num_categories;
  }
  b.weights = pretrain_backbone(cfg.vit, shapes, pre, cfg.backbone.init_std, cfg.seed);
  b.hash = content_hash(b.weights.tensors);
  return b;
}

std::string dataset_hash(const ClassificationSet& data) {
  TensorMap m;
  Tensor labels({data.size()});
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << "image." << std::setw(6) << std::setfill('0') << i;
    m.emplace(name.str(), data.images[i]);
    labels[i] = static_cast<float>(data.labels[i]);
  }
  m.emplace("labels", labels);
  return content_hash(m);
}

struct ClassData {
  ClassificationSet train;
  std::optional<ClassificationSet> val;
  std::string hash;
};

ClassificationSet resized(ClassificationSet set, std::size_t size) {
  for (auto& img : set.images) img = resize_image(img, size);
  return set;
}

ClassData make_classification(const RunConfig& cfg, const ViTWeights& weights) {
  ClassData d;
  const std::size_t classes = cfg.adaptation.num_classes;
  if (cfg.data.source == "directory") {
    d.train = resized(load_classification(cfg.data.train), cfg.vit.image_size);
    d.hash = file_hash(fs::path(cfg.data.train) / "index.json");
    if (!cfg.data.val.empty()) d.val = resized(load_classification(cfg.data.val), cfg.vit.image_size);
    if (d.train.num_classes != classes) {
      throw ConfigError("adaptation.classes: " + std::to_string(classes) + " but dataset has " +
                        std::to_string(d.train.num_classes) + " classes");
    }
    return d;
  }
  const std::size_t total = cfg.data.count + cfg.data.val_count;
  ClassificationSet all;
  if (cfg.data.source == "teacher") {
    const std::size_t m = cfg.data.teacher_prompts ? cfg.data.teacher_prompts : cfg.adaptation.prompts;
    all = make_teacher_task(weights, cfg.adaptation.sites, m, total, classes, cfg.data.delta_std,
                            derive_seed(cfg.seed, "teacher"))
              .data;
  } else {
    all = gen_synthetic_classification({total, cfg.vit.image_size, classes, cfg.vit.channels},
                                       derive_seed(cfg.seed, "synthetic-data"));
  }
  d.hash = dataset_hash(all);
  d.train.num_classes = classes;
  for (std::size_t i = 0; i < cfg.data.count; ++i) {
    d.train.images.push_back(all.images[i]);
    d.train.labels.push_back(all.labels[i]);
  }
  if (cfg.data.val_count > 0) {
    d.val = ClassificationSet{};
    d.val->num_classes = classes;
    for (std::size_t i = cfg.data.count; i < total; ++i) {
      d.val->images.push_back(all.images[i]);
      d.val->labels.push_back(all.labels[i]);
    }
  }
  return d;
}

SegmentationSet make_segmentation(const RunConfig& cfg, std::string& hash) {
  if (cfg.data.source == "directory") {
    SegmentationSet s = load_segmentation(cfg.data.train);
    for (auto& img : s.images) img = resize_image(img, cfg.vit.image_size);
    for (auto& m : s.label_maps) m = resize_mask_nearest(m, cfg.vit.image_size);
    hash = file_hash(fs::path(cfg.data.train) / "index.json");
    return s;
  }
  SegmentationSet s =
      gen_synthetic_segmentation({cfg.data.count, cfg.vit.image_size, cfg.data.categories, cfg.vit.channels},
                                 derive_seed(cfg.seed, "segmentation-data"));
  TensorMap m;
  for (std::size_t i = 0; i < s.size(); ++i) {
    m.emplace("image." + std::to_string(i), s.images[i]);
    m.emplace("mask." + std::to_string(i), s.label_maps[i]);
  }
  hash = content_hash(m);
  return s;
}

struct RunOutcome {
  Adaptation model;
  TrainResult result;
  MetricsRecord train_eval, val_eval;
  bool has_val = false;
};

RunOutcome train_once(const RunConfig& cfg, const ViTWeights& weights, const ClassData& data, std::ostream* log) {
  RunOutcome o{build_adaptation(cfg.adaptation, weights, derive_seed(cfg.seed, "adaptation")), {}, {}, {}, false};
  o.result = train_classifier(o.model, data.train, data.val ? &*data.val : nullptr, cfg.train, log);
  o.train_eval = evaluate(o.model, data.train, cfg.train.batch_size);
  if (data.val) {
    o.val_eval = evaluate(o.model, *data.val, cfg.train.batch_size);
    o.has_val = true;
  }
  return o;
}

std::vector<ojson> outcome_cells(const RunOutcome& o) {
  return {o.model.store.parameter_count(true),
          o.train_eval.loss,
          o.train_eval.metric,
          o.has_val ? ojson(o.val_eval.loss) : ojson(),
          o.has_val ? ojson(o.val_eval.metric) : ojson(),
          o.has_val ? ojson(o.val_eval.metric) : ojson(o.train_eval.metric)};
}
const std::vector<std::string> kOutcomeColumns{"tuned_params", "train_loss", "train_acc", "val_loss", "val_acc",
                                               "metric"};

// ---------------------------------------------------------------------------

int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig cfg = load_config(f);
  if (cfg.task != TaskKind::Classification) throw ConfigError("config.task: train expects classification");
  const fs::path dir = prepare_out(cfg.out);
  const Backbone backbone = make_backbone(cfg);
  const std::string before = content_hash(backbone.weights.tensors);
  const ClassData data = make_classification(cfg, backbone.weights);

  std::ofstream log(dir / "metrics.jsonl", std::ios::binary);
  if (!log) throw IoError("cannot write " + (dir / "metrics.jsonl").string());
  RunOutcome o = train_once(cfg, backbone.weights, data, &log);
  log.close();

  Table metrics{{"epoch", "split", "loss", "metric"}, {}};
  for (const MetricsRecord& r : o.result.log) metrics.rows.push_back({r.epoch, r.split, r.loss, r.metric});
  write_file(dir / "metrics.csv", metrics.to_csv());

  const TensorMap trainables = o.model.trainables();
  save_archive(dir / "trainables.xt", trainables);
  if (content_hash(backbone.weights.tensors) != before) throw ContractError("backbone weights changed during training");

  ojson manifest;
  manifest["config"] = config_to_json(cfg);
  manifest["backbone_hash"] = backbone.hash;
  manifest["dataset_hash"] = data.hash;
  manifest["frozen_hash"] = o.result.frozen_hash;
  manifest["trainables_hash"] = content_hash(trainables);
  manifest["steps"] = o.result.steps;
  manifest["aborted"] = o.result.aborted;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  if (o.result.aborted) throw NumericError("training aborted, last good trainables kept: " + o.result.abort_reason);
  Table summary{{"method", "M"}, {{method_name(cfg.adaptation.method), cfg.adaptation.prompts}}};
  summary.columns.insert(summary.columns.end(), kOutcomeColumns.begin(), kOutcomeColumns.end());
  for (auto& c : outcome_cells(o)) summary.rows[0].push_back(c);
  emit_table(summary, dir, "summary", out);
  return 0;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const RunConfig cfg = load_config(f);
  if (cfg.task != TaskKind::Classification) throw ConfigError("config.task: eval expects classification");
  const fs::path dir = prepare_out(cfg.out);
  const Backbone backbone = make_backbone(cfg);
  const ClassData data = make_classification(cfg, backbone.weights);
  Adaptation model = build_adaptation(cfg.adaptation, backbone.weights, derive_seed(cfg.seed, "adaptation"));
  const fs::path src = f.trainables.empty() ? dir / "trainables.xt" : fs::path(f.trainables);
  model.load_trainables(load_archive(src));
  Table t{{"split", "loss", "metric"}, {}};
  const MetricsRecord tr = evaluate(model, data.train, cfg.train.batch_size);
  t.rows.push_back({"train", tr.loss, tr.metric});
  if (data.val) {
    const MetricsRecord v = evaluate(model, *data.val, cfg.train.batch_size);
    t.rows.push_back({"val", v.loss, v.metric});
  }
  emit_table(t, dir, "eval", out);
  return 0;
}

EpisodeConfig episode_config(const RunConfig& cfg) {
  EpisodeConfig ec;
  ec.prompts = cfg.adaptation.prompts;
  ec.sites = cfg.adaptation.sites;
  ec.residuals_enabled = !cfg.adaptation.sites.sites.empty();
  ec.feature = cfg.episodes.feature;
  ec.train = cfg.train;
  return ec;
}

int cmd_episodes(const Flags& f, std::ostream& out) {
  const RunConfig cfg = load_config(f);
  if (cfg.task != TaskKind::Episodes) throw ConfigError("config.task: episodes expects segmentation");
  const fs::path dir = prepare_out(cfg.out);
  const Backbone backbone = make_backbone(cfg);
  std::string data_hash;
  const SegmentationSet data = make_segmentation(cfg, data_hash);
  const EpisodeSummary s = run_episodes(backbone.weights, data, cfg.episodes.count, derive_seed(cfg.seed, "episodes"),
                                        episode_config(cfg), worker_threads());
  std::string lines;
  Table t{{"episode", "category", "seed", "miou"}, {}};
  for (const EpisodeResult& r : s.episodes) {
    lines += r.to_json() + "\n";
    t.rows.push_back({r.episode, r.category, r.seed, r.miou});
  }
  lines += s.to_json() + "\n";
  write_file(dir / "episodes.jsonl", lines);
  write_file(dir / "episodes.csv", t.to_csv());
  Table summary{{"episodes", "mean_miou", "dataset_miou"}, {{s.episodes.size(), s.mean_miou, s.dataset_miou}}};
  ojson manifest;
  manifest["config"] = config_to_json(cfg);
  manifest["backbone_hash"] = backbone.hash;
  manifest["dataset_hash"] = data_hash;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  emit_table(summary, dir, "summary", out);
  return 0;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  RunConfig cfg = load_config(f);
  const fs::path dir = prepare_out(cfg.out);
  const Backbone backbone = make_backbone(cfg);
  Adaptation model = build_adaptation(cfg.adaptation, backbone.weights, derive_seed(cfg.seed, "adaptation"));
  // Evaluate at a generic point rather than at the zero-residual initialisation.
  Rng rng(derive_seed(cfg.seed, "gradcheck-point"));
  for (const std::string& name : model.trainable_names()) {
    model.store.assign(name, trunc_normal_tensor(model.store.value(name).dims(), 0.5f, rng));
  }
  const Tensor image = uniform_tensor({cfg.vit.channels, cfg.vit.image_size, cfg.vit.image_size}, 0.0f, 1.0f, rng);
  const std::vector<int> target{0};
  const LossFn loss = [&](Graph& g) { return ops::cross_entropy(g, model.logits(g, {&image}), target); };

  Table t{{"tensor", "max_rel_error", "worst_index", "analytic", "numeric", "pass"}, {}};
  bool ok = true;
  for (const std::string& name : model.trainable_names()) {
    const FiniteDiffReport r = finite_diff_report(model.store, loss, name, f.eps);
    const bool pass = r.max_rel_error < 1e-3f;
    ok = ok && pass;
    t.rows.push_back({name, r.max_rel_error, r.worst_index, r.analytic, r.numeric, pass});
  }
  emit_table(t, dir, "gradcheck", out);
  if (!ok) throw NumericError("gradient check: max_rel_error >= 1e-3 for at least one tensor");
  return 0;
}

int cmd_account(const Flags& f, std::ostream& out) {
  ViTConfig vit;
  if (!f.config.empty()) {
    vit = load_config(f).vit;
  } else if (f.vit == "vitb16" || f.vit == "vit_b16") {
    vit = ViTConfig::vit_b16();
  } else {
    throw ConfigError("--vit: unknown preset '" + f.vit + "'");
  }
  const std::vector<std::size_t> ms = parse_uint_list(f.prompts.empty() ? "1,100" : f.prompts, "--M");
  const fs::path dir = prepare_out(f.out);
  Table t{{"method", "M", "k", "tuned_params", "backbone_params", "head_params", "tuned_ratio_pct", "gmacs"}, {}};
  for (Method m : all_methods()) {
    const std::vector<std::size_t> rows = is_prompting(m) ? ms : std::vector<std::size_t>{0};
    for (std::size_t prompts : rows) {
      AdaptationSpec spec;
      spec.method = m;
      spec.k = f.k;
      spec.prompts = prompts;
      spec.num_classes = f.classes;
      spec.sites = ResidualSiteConfig::attention(vit.layers);
      if (!f.sites.empty()) spec.sites.sites = parse_site_list(f.sites);
      spec.validate(vit);
      const CostReport r = count_trainable(spec, vit);
      const bool uses_k = m == Method::MlpK || m == Method::PartialK;
      t.rows.push_back({method_name(m), is_prompting(m) ? ojson(prompts) : ojson(), uses_k ? ojson(f.k) : ojson(),
                        r.tuned_params, r.backbone_params, r.head_params, r.tuned_ratio_pct, r.gmacs()});
    }
  }
  emit_table(t, dir, "account", out);
  return 0;
}

// Trains one variant per row; the shared backbone and data come from the config.
template <typename Variants, typename Apply>
int sweep_rows(const Flags& f, std::ostream& out, const std::string& stem, const std::string& key,
               const Variants& variants, Apply apply) {
  const RunConfig base = load_config(f);
  if (base.task != TaskKind::Classification) throw ConfigError("config.task: " + stem + " expects classification");
  const fs::path dir = prepare_out(base.out);
  const Backbone backbone = make_backbone(base);
  const ClassData data = make_classification(base, backbone.weights);
  Table t{{key}, {}};
  t.columns.insert(t.columns.end(), kOutcomeColumns.begin(), kOutcomeColumns.end());
  for (const auto& v : variants) {
    RunConfig cfg = base;
    const ojson label = apply(cfg, v);
    if (const auto errors = cfg.violations(); !errors.empty()) throw ConfigError(errors);
    const RunOutcome o = train_once(cfg, backbone.weights, data, nullptr);
    if (o.result.aborted) throw NumericError(stem + " run " + cell(label) + " aborted: " + o.result.abort_reason);
    std::vector<ojson> row{label};
    for (auto& c : outcome_cells(o)) row.push_back(c);
    t.rows.push_back(row);
  }
  emit_table(t, dir, stem, out);
  return 0;
}

int cmd_sweep_prompts(const Flags& f, std::ostream& out) {
  const auto ms = parse_uint_list(f.prompts.empty() ? "1,5,10,30,100" : f.prompts, "--M");
  return sweep_rows(f, out, "sweep_prompts", "M", ms, [](RunConfig& cfg, std::size_t m) {
    cfg.adaptation.prompts = m;
    return ojson(m);
  });
}

int cmd_ablate_propagation(const Flags& f, std::ostream& out) {
  const std::size_t layers = load_config(f).vit.layers;
  std::vector<std::size_t> cutoffs;
  for (std::size_t c = std::min<std::size_t>(2, layers); c <= layers; ++c) cutoffs.push_back(c);
  // --M, when given, fixes the prompt count of every row.
  return sweep_rows(f, out, "ablate_propagation", "cutoff", cutoffs, [&](RunConfig& cfg, std::size_t c) {
    if (!f.prompts.empty()) cfg.adaptation.prompts = parse_uint_list(f.prompts, "--M").front();
    cfg.adaptation.cutoff = c;
    return ojson(c);
  });
}

int cmd_ablate_sites(const Flags& f, std::ostream& out) {
  std::vector<std::pair<std::string, std::vector<ResidualSite>>> variants{{"none", {}}};
  for (std::size_t i = 0; i < kNumSites; ++i) {
    const auto s = static_cast<ResidualSite>(i);
    variants.push_back({site_name(s), {s}});
  }
  variants.push_back({"Att", ResidualSiteConfig::attention(1).sites});
  return sweep_rows(f, out, "ablate_sites", "sites", variants, [](RunConfig& cfg, const auto& v) {
    cfg.adaptation.sites.sites = v.second;
    return ojson(v.first);
  });
}

int cmd_ablate_start_layer(const Flags& f, std::ostream& out) {
  const std::size_t layers = load_config(f).vit.layers;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < layers; ++s) starts.push_back(s);
  return sweep_rows(f, out, "ablate_start_layer", "start_layer", starts, [layers](RunConfig& cfg, std::size_t s) {
    cfg.adaptation.sites.start_layer = s;
    cfg.adaptation.sites.end_layer = layers - 1;
    return ojson(s);
  });
}

int cmd_dump_attn(const Flags& f, std::ostream& out) {
  const RunConfig cfg = load_config(f);
  if (cfg.adaptation.method != Method::Expres) throw ConfigError("adaptation.method: dump-attn needs expres");
  const fs::path dir = prepare_out(cfg.out);
  const Backbone backbone = make_backbone(cfg);
  Adaptation model = build_adaptation(cfg.adaptation, backbone.weights, derive_seed(cfg.seed, "adaptation"));
  if (!f.trainables.empty()) model.load_trainables(load_archive(f.trainables));
  Tensor image;
  if (cfg.task == TaskKind::Episodes) {
    std::string hash;
    const SegmentationSet s = make_segmentation(cfg, hash);
    if (f.image >= s.size()) throw ConfigError("--image: index outside dataset");
    image = s.images[f.image];
  } else {
    const ClassData d = make_classification(cfg, backbone.weights);
    if (f.image >= d.train.size()) throw ConfigError("--image: index outside dataset");
    image = d.train.images[f.image];
  }
  TensorMap prompts;
  for (const auto& [name, t] : model.trainables())
    if (name.rfind("prompt.", 0) == 0) prompts.emplace(name, t);
  const ExpresResult r =
      expres_forward(image, backbone.weights, PromptBank::from_tensors(prompts), model.expres_options());
  const std::size_t g = cfg.vit.grid();
  ojson maps = ojson::array();
  Table t{{"layer", "prompt", "row", "col", "weight"}, {}};
  for (std::size_t l = 0; l < cfg.vit.layers; ++l) {
    for (std::size_t m = 0; m < cfg.adaptation.prompts; ++m) {
      const Tensor a = dump_prompt_attention(r.activations, m, l);
      ojson grid = ojson::array();
      for (std::size_t y = 0; y < g; ++y) {
        ojson row = ojson::array();
        for (std::size_t x = 0; x < g; ++x) {
          row.push_back(a[y * g + x]);
          t.rows.push_back({l, m, y, x, a[y * g + x]});
        }
        grid.push_back(row);
      }
      maps.push_back({{"layer", l}, {"prompt", m}, {"weights", grid}});
    }
  }
  write_file(dir / "attention.csv", t.to_csv());
  write_file(dir / "attention.json", ojson{{"grid", g}, {"maps", maps}}.dump() + "\n");
  out << "wrote " << t.rows.size() << " attention weights for " << cfg.vit.layers << " layers x "
      << cfg.adaptation.prompts << " prompts to " << dir.string() << "\n";
  return 0;
}

void error_json(std::ostream& err, const std::string& kind, const std::string& message,
                const std::vector<std::string>& violations = {}) {
  ojson j;
  j["error"] = kind;
  j["message"] = message;
  j["violations"] = violations;
  err << j.dump() << '\n';
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Contract:
    case ErrorKind::Shape: return 2;
    case ErrorKind::Numeric: return 3;
    case ErrorKind::Format:
    case ErrorKind::Io: return 4;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Expressive prompt tuning with residual tokens"};
  app.require_subcommand(1);
  Flags f;
  std::function<int()> action;

  auto common = [&f](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", f.config, "run configuration JSON");
    if (config_required) opt->required();
    sub->add_option("--out", f.out, "output directory (overrides the config)");
    sub->add_option("--seed", f.seed, "base seed (overrides the config)");
    sub->add_option("--M", f.prompts, "prompt counts, comma separated");
    sub->add_option("--cutoff", f.cutoff, "propagation cutoff layer");
    sub->add_option("--sites", f.sites, "residual sites, comma separated");
  };

  auto* train = app.add_subcommand("train", "train an adaptation on a classification task");
  common(train, true);
  train->callback([&] { action = [&] { return cmd_train(f, out); }; });

  auto* eval = app.add_subcommand("eval", "evaluate saved trainables");
  common(eval, true);
  eval->add_option("--trainables", f.trainables, "trainables archive (default OUT/trainables.xt)");
  eval->callback([&] { action = [&] { return cmd_eval(f, out); }; });

  auto* episodes = app.add_subcommand("episodes", "few-shot segmentation episodes");
  common(episodes, true);
  episodes->callback([&] { action = [&] { return cmd_episodes(f, out); }; });

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every trainable tensor");
  common(gradcheck, true);
  gradcheck->add_option("--eps", f.eps, "finite-difference step");
  gradcheck->callback([&] { action = [&] { return cmd_gradcheck(f, out); }; });

  auto* account = app.add_subcommand("account", "trainable parameters and MACs per method");
  common(account, false);
  account->add_option("--vit", f.vit, "encoder preset");
  account->add_option("--classes", f.classes, "number of classes");
  account->add_option("--k", f.k, "k for mlp_k and partial_k");
  account->callback([&] { action = [&] { return cmd_account(f, out); }; });

  auto* sweep = app.add_subcommand("sweep", "parameter sweeps");
  sweep->require_subcommand(1);
  auto* sweep_prompts = sweep->add_subcommand("prompts", "accuracy against prompt count");
  common(sweep_prompts, true);
  sweep_prompts->callback([&] { action = [&] { return cmd_sweep_prompts(f, out); }; });

  auto* ablate = app.add_subcommand("ablate", "ablations");
  ablate->require_subcommand(1);
  auto* propagation = ablate->add_subcommand("propagation", "prompts isolated from layer c onward");
  common(propagation, true);
  propagation->callback([&] { action = [&] { return cmd_ablate_propagation(f, out); }; });
  auto* sites = ablate->add_subcommand("sites", "one residual site at a time");
  common(sites, true);
  sites->callback([&] { action = [&] { return cmd_ablate_sites(f, out); }; });
  auto* start = ablate->add_subcommand("start-layer", "first layer carrying residual prompts");
  common(start, true);
  start->callback([&] { action = [&] { return cmd_ablate_start_layer(f, out); }; });

  auto* dump = app.add_subcommand("dump-attn", "prompt attention over the patch grid");
  common(dump, true);
  dump->add_option("--trainables", f.trainables, "trainables archive");
  dump->add_option("--image", f.image, "dataset image index");
  dump->callback([&] { action = [&] { return cmd_dump_attn(f, out); }; });

  std::vector<std::string> argv_store{"expres"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    error_json(err, "config", e.what());
    return 2;
  }
  try {
    return action ? action() : 2;
  } catch (const ConfigError& e) {
    error_json(err, to_string(e.kind()), e.what(), e.violations);
    return exit_code(e.kind());
  } catch (const Error& e) {
    error_json(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    error_json(err, "internal", e.what());
    return 1;
  }
}

}  // namespace expres
