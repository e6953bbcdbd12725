#include "expres/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "expres/errors.hpp"
#include "expres/rng.hpp"

namespace expres {
namespace {

using json = nlohmann::json;

// Reads one JSON object, recording type errors and unknown keys under `path`.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(path_ + ": expected an object");
  }
  ~ObjectReader() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) errors_.push_back(field(key) + ": unknown key");
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object()) return nullptr;
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  bool read_uint(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
      errors_.push_back(field(key) + ": expected a non-negative integer");
      return false;
    }
    out = static_cast<T>(v->get<std::uint64_t>());
    return true;
  }

  template <typename T>
  bool read_number(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number()) {
      errors_.push_back(field(key) + ": expected a number");
      return false;
    }
    out = static_cast<T>(v->get<double>());
    return true;
  }

  bool read_string(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_string()) {
      errors_.push_back(field(key) + ": expected a string");
      return false;
    }
    out = v->get<std::string>();
    return true;
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void read_vit(const json& j, ViTConfig& vit, std::vector<std::string>& errors) {
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    if (name == "vitb16" || name == "vit_b16" || name == "ViT-B/16") {
      vit = ViTConfig::vit_b16();
    } else {
      errors.push_back("vit: unknown preset '" + name + "'");
    }
    return;
  }
  ObjectReader r(j, "vit", errors);
  r.read_uint("image_size", vit.image_size);
  r.read_uint("patch_size", vit.patch_size);
  r.read_uint("dim", vit.dim);
  r.read_uint("layers", vit.layers);
  r.read_uint("heads", vit.heads);
  r.read_uint("mlp_ratio", vit.mlp_ratio);
  r.read_uint("channels", vit.channels);
}

void read_adaptation(const json& j, const ViTConfig& vit, AdaptationSpec& a, std::vector<std::string>& errors) {
  ObjectReader r(j, "adaptation", errors);
  std::string method;
  if (r.read_string("method", method)) {
    if (auto m = parse_method(method)) {
      a.method = *m;
    } else {
      errors.push_back("adaptation.method: unknown method '" + method + "'");
    }
  }
  r.read_uint("M", a.prompts);
  r.read_uint("k", a.k);
  r.read_uint("classes", a.num_classes);
  r.read_uint("start_layer", a.sites.start_layer);
  r.read_uint("end_layer", a.sites.end_layer);
  if (const json* c = r.find("cutoff"); c && !c->is_null()) {
    if (!c->is_number_unsigned()) {
      errors.push_back("adaptation.cutoff: expected a non-negative integer or null");
    } else {
      a.cutoff = c->get<std::size_t>();
    }
  }
  if (const json* s = r.find("sites")) {
    a.sites.sites.clear();
    if (!s->is_array()) {
      errors.push_back("adaptation.sites: expected an array of site names");
    } else {
      for (const auto& item : *s) {
        const auto site = item.is_string() ? parse_site(item.get<std::string>()) : std::nullopt;
        if (!site) {
          errors.push_back("adaptation.sites: unknown site " + item.dump() +
                           " (expected LN, Q, K, V, proj, LN_mlp, L1_mlp, L2_mlp)");
        } else {
          a.sites.sites.push_back(*site);
        }
      }
    }
  }
  (void)vit;
}

void read_train(const json& j, TrainConfig& t, std::vector<std::string>& errors) {
  ObjectReader r(j, "train", errors);
  r.read_number("lr", t.lr);
  r.read_number("weight_decay", t.weight_decay);
  r.read_uint("epochs", t.epochs);
  r.read_uint("warmup_epochs", t.warmup_epochs);
  r.read_uint("batch_size", t.batch_size);
  r.read_number("eps", t.eps);
  r.read_number("clip_norm", t.clip_norm);
  if (const json* b = r.find("betas")) {
    if (!b->is_array() || b->size() != 2 || !(*b)[0].is_number() || !(*b)[1].is_number()) {
      errors.push_back("train.betas: expected [beta1, beta2]");
    } else {
      t.beta1 = (*b)[0].get<double>();
      t.beta2 = (*b)[1].get<double>();
    }
  }
}

}  // namespace

const char* feature_name(DenseFeature f) {
  switch (f) {
    case DenseFeature::Keys: return "K";
    case DenseFeature::Queries: return "Q";
    case DenseFeature::Mlp: return "MLP";
  }
  return "?";
}

std::optional<DenseFeature> parse_feature(std::string_view name) {
  for (DenseFeature f : {DenseFeature::Keys, DenseFeature::Queries, DenseFeature::Mlp})
    if (name == feature_name(f)) return f;
  return std::nullopt;
}

std::vector<ResidualSite> parse_site_list(const std::string& csv) {
  std::vector<ResidualSite> out;
  std::vector<std::string> errors;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (auto s = parse_site(item)) {
      out.push_back(*s);
    } else {
      errors.push_back("--sites: unknown site '" + item + "'");
    }
  }
  if (!errors.empty()) throw ConfigError(errors);
  return out;
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> errors;
  try {
    vit.validate();
  } catch (const ContractError& e) {
    errors.push_back(std::string("vit: ") + e.what());
    return errors;
  }
  for (auto& e : adaptation.violations(vit, "adaptation")) errors.push_back(std::move(e));
  for (auto& e : train.violations("train")) errors.push_back(std::move(e));
  if (data.source != "synthetic" && data.source != "teacher" && data.source != "directory") {
    errors.push_back("data.source: expected synthetic, teacher or directory, got '" + data.source + "'");
  }
  if (data.source == "directory" && data.train.empty()) errors.push_back("data.train: required for directory data");
  if (data.source != "directory" && data.count == 0) errors.push_back("data.count: must be >= 1");
  if (!(backbone.init_std > 0.0f)) errors.push_back("backbone.init_std: must be > 0");
  if (task == TaskKind::Episodes) {
    if (adaptation.method != Method::Expres) {
      errors.push_back("adaptation.method: episodes task segments with expres prompts, got '" +
                       std::string(method_name(adaptation.method)) + "'");
    }
    if (data.source == "teacher") errors.push_back("data.source: teacher data is a classification source");
    if (data.categories < 1 || data.categories > 8) errors.push_back("data.categories: must lie in [1, 8]");
  } else if (data.source == "teacher") {
    if (data.teacher_prompts == 0 && adaptation.prompts == 0) errors.push_back("data.teacher_M: must be >= 1");
    if (!(data.delta_std > 0.0f)) errors.push_back("data.delta_std: must be > 0");
  }
  return errors;
}

RunConfig parse_config_json(const nlohmann::json& j) {
  RunConfig cfg;
  std::vector<std::string> errors;
  {
    ObjectReader root(j, "config", errors);
    root.read_uint("seed", cfg.seed);
    root.read_string("out", cfg.out);
    if (const json* v = root.find("vit")) read_vit(*v, cfg.vit, errors);

    // Layer-dependent defaults: Att sites over every layer.
    cfg.adaptation.sites = ResidualSiteConfig::attention(std::max<std::size_t>(cfg.vit.layers, 1));
    if (const json* v = root.find("adaptation")) read_adaptation(*v, cfg.vit, cfg.adaptation, errors);
    if (const json* v = root.find("train")) read_train(*v, cfg.train, errors);
    cfg.train.seed = derive_seed(cfg.seed, "train");

    std::string task = "classification";
    if (root.read_string("task", task)) {
      if (task == "classification") {
        cfg.task = TaskKind::Classification;
      } else if (task == "segmentation" || task == "episodes") {
        cfg.task = TaskKind::Episodes;
      } else {
        errors.push_back("config.task: expected classification, segmentation or episodes, got '" + task + "'");
      }
    }
    if (const json* v = root.find("backbone")) {
      ObjectReader r(*v, "backbone", errors);
      if (const json* c = r.find("checkpoint"); c && !c->is_null()) {
        if (c->is_string()) {
          cfg.backbone.checkpoint = c->get<std::string>();
        } else {
          errors.push_back("backbone.checkpoint: expected a path or null");
        }
      }
      r.read_number("init_std", cfg.backbone.init_std);
      r.read_uint("pretrain_epochs", cfg.backbone.pretrain_epochs);
    }
    if (const json* v = root.find("data")) {
      ObjectReader r(*v, "data", errors);
      r.read_string("source", cfg.data.source);
      r.read_string("train", cfg.data.train);
      r.read_string("val", cfg.data.val);
      r.read_uint("count", cfg.data.count);
      r.read_uint("val_count", cfg.data.val_count);
      r.read_uint("categories", cfg.data.categories);
      r.read_number("delta_std", cfg.data.delta_std);
      r.read_uint("teacher_M", cfg.data.teacher_prompts);
    }
    if (const json* v = root.find("episodes")) {
      ObjectReader r(*v, "episodes", errors);
      r.read_uint("count", cfg.episodes.count);
      std::string feature;
      if (r.read_string("feature", feature)) {
        if (auto f = parse_feature(feature)) {
          cfg.episodes.feature = *f;
        } else {
          errors.push_back("episodes.feature: expected K, Q or MLP, got '" + feature + "'");
        }
      }
    }
  }
  for (auto& e : cfg.violations()) errors.push_back(std::move(e));
  if (!errors.empty()) throw ConfigError(errors);
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config_json(j);
}

nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["vit"] = {{"image_size", cfg.vit.image_size}, {"patch_size", cfg.vit.patch_size}, {"dim", cfg.vit.dim},
              {"layers", cfg.vit.layers},         {"heads", cfg.vit.heads},           {"mlp_ratio", cfg.vit.mlp_ratio},
              {"channels", cfg.vit.channels}};
  nlohmann::ordered_json a;
  a["method"] = method_name(cfg.adaptation.method);
  a["M"] = cfg.adaptation.prompts;
  a["k"] = cfg.adaptation.k;
  a["classes"] = cfg.adaptation.num_classes;
  nlohmann::ordered_json sites = nlohmann::ordered_json::array();
  for (ResidualSite s : cfg.adaptation.sites.sites) sites.push_back(site_name(s));
  a["sites"] = sites;
  a["start_layer"] = cfg.adaptation.sites.start_layer;
  a["end_layer"] = cfg.adaptation.sites.end_layer;
  a["cutoff"] = cfg.adaptation.cutoff ? nlohmann::ordered_json(*cfg.adaptation.cutoff) : nlohmann::ordered_json();
  j["adaptation"] = a;
  j["train"] = {{"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"warmup_epochs", cfg.train.warmup_epochs},
                {"batch_size", cfg.train.batch_size},
                {"betas", {cfg.train.beta1, cfg.train.beta2}},
                {"eps", cfg.train.eps},
                {"clip_norm", cfg.train.clip_norm}};
  j["task"] = cfg.task == TaskKind::Classification ? "classification" : "episodes";
  j["backbone"] = {{"checkpoint", cfg.backbone.checkpoint ? nlohmann::ordered_json(*cfg.backbone.checkpoint)
                                                          : nlohmann::ordered_json()},
                   {"init_std", cfg.backbone.init_std},
                   {"pretrain_epochs", cfg.backbone.pretrain_epochs}};
  j["data"] = {{"source", cfg.data.source},       {"train", cfg.data.train},
               {"val", cfg.data.val},             {"count", cfg.data.count},
               {"val_count", cfg.data.val_count}, {"categories", cfg.data.categories},
               {"delta_std", cfg.data.delta_std}, {"teacher_M", cfg.data.teacher_prompts}};
  j["episodes"] = {{"count", cfg.episodes.count}, {"feature", feature_name(cfg.episodes.feature)}};
  j["out"] = cfg.out;
  return j;
}

}  // namespace expres
