#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "expres/archive.hpp"
#include "expres/errors.hpp"
#include "expres/ops.hpp"
#include "expres/rng.hpp"
#include "expres/tasks.hpp"
#include "json.hpp"

namespace expres {
namespace {

using json = nlohmann::ordered_json;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Category colours; category c uses shape c % 4 and colour c % 8.
constexpr float kPalette[8][3] = {{0.9f, 0.1f, 0.1f}, {0.1f, 0.8f, 0.2f}, {0.15f, 0.2f, 0.95f}, {0.95f, 0.85f, 0.1f},
                                  {0.85f, 0.2f, 0.85f}, {0.1f, 0.85f, 0.9f}, {0.95f, 0.5f, 0.05f}, {0.5f, 0.25f, 0.1f}};

std::string item_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i << ".xt";
  return os.str();
}

void write_index(const std::filesystem::path& dir, const json& index) {
  std::ofstream os(dir / "index.json");
  if (!os) throw IoError("cannot write " + (dir / "index.json").string());
  os << index.dump(2) << '\n';
}

json read_index(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.json");
  if (!is) throw IoError("cannot read " + (dir / "index.json").string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
}

}  // namespace

bool PlantedShape::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  switch (kind) {
    case Circle: return dx * dx + dy * dy <= radius * radius;
    case Square: return std::fabs(dx) <= 0.85 * radius && std::fabs(dy) <= 0.85 * radius;
    case Triangle: return dy >= -radius && dy <= radius && std::fabs(dx) <= 0.5 * (dy + radius);
    case Diamond: return std::fabs(dx) + std::fabs(dy) <= radius;
  }
  return false;
}

ClassificationSet gen_synthetic_classification(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2) throw ContractError("gen_synthetic: need at least 2 classes");
  ClassificationSet out;
  out.num_classes = spec.num_classes;
  Rng rng(derive_seed(seed, "synthetic-classification"));
  const std::size_t s = spec.image_size, region = std::max<std::size_t>(s / 2, 1);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const int label = static_cast<int>(i % spec.num_classes);
    Tensor img({spec.channels, s, s});
    for (auto& v : img.values()) v = clamp01(0.5 + rng.uniform(-0.05, 0.05));
    const double theta = std::numbers::pi * label / static_cast<double>(spec.num_classes);
    const double freq = 3.0 / static_cast<double>(region);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const std::size_t x0 = rng.index(s - region + 1), y0 = rng.index(s - region + 1);
    for (std::size_t y = 0; y < region; ++y) {
      for (std::size_t x = 0; x < region; ++x) {
        const double u = std::cos(theta) * static_cast<double>(x) + std::sin(theta) * static_cast<double>(y);
        const double v = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * freq * u + phase);
        for (std::size_t c = 0; c < spec.channels; ++c) img[(c * s + y0 + y) * s + x0 + x] = clamp01(v);
      }
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
  return out;
}

SegmentationSet gen_synthetic_segmentation(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 1 || spec.num_classes > 8) throw ContractError("gen_synthetic: 1..8 categories supported");
  SegmentationSet out;
  out.num_categories = spec.num_classes;
  Rng rng(derive_seed(seed, "synthetic-segmentation"));
  const std::size_t s = spec.image_size;
  const double sd = static_cast<double>(s);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const int category = static_cast<int>(i % spec.num_classes);
    Tensor img({spec.channels, s, s});
    // background: per-image grey level, oriented texture, pixel noise
    const double base = rng.uniform(0.35, 0.65);
    const double tex_angle = rng.uniform(0.0, std::numbers::pi);
    const double tex_freq = rng.uniform(0.15, 0.4);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const double u = std::cos(tex_angle) * static_cast<double>(x) + std::sin(tex_angle) * static_cast<double>(y);
          img[(c * s + y) * s + x] = clamp01(base + 0.08 * std::sin(tex_freq * u) + rng.uniform(-0.04, 0.04));
        }
      }
    }
    std::vector<PlantedShape> shapes;
    if (spec.num_classes > 1 && rng.uniform() < 0.5) {
      int other = static_cast<int>(rng.index(spec.num_classes - 1));
      if (other >= category) ++other;
      PlantedShape d;
      d.category = other;
      d.kind = static_cast<PlantedShape::Kind>(other % 4);
      d.radius = rng.uniform(0.1, 0.16) * sd;
      d.cx = rng.uniform(d.radius, sd - d.radius);
      d.cy = rng.uniform(d.radius, sd - d.radius);
      shapes.push_back(d);
    }
    PlantedShape p;
    p.category = category;
    p.kind = static_cast<PlantedShape::Kind>(category % 4);
    p.radius = rng.uniform(0.2, 0.3) * sd;
    p.cx = rng.uniform(p.radius, sd - p.radius);
    p.cy = rng.uniform(p.radius, sd - p.radius);
    shapes.push_back(p);

    Tensor labels({s, s});
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        for (const PlantedShape& sh : shapes) {
          if (sh.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
            labels[y * s + x] = static_cast<float>(sh.category + 1);
          }
        }
        const int lab = static_cast<int>(labels[y * s + x]);
        if (lab > 0) {
          const float* colour = kPalette[(lab - 1) % 8];
          for (std::size_t c = 0; c < spec.channels; ++c) {
            img[(c * s + y) * s + x] = clamp01(colour[c % 3] + rng.uniform(-0.03, 0.03));
          }
        }
      }
    }
    out.images.push_back(std::move(img));
    out.label_maps.push_back(std::move(labels));
    out.categories.push_back(category);
    out.shapes.push_back(std::move(shapes));
  }
  return out;
}

std::vector<Tensor> gen_smooth_images(std::size_t count, std::size_t channels, std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "smooth-images"));
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor coarse = uniform_tensor({channels, 4, 4}, 0.0f, 1.0f, rng);
    Tensor img = bilinear_resize(coarse, size, size);
    for (auto& v : img.values()) v = clamp01(v + rng.uniform(-0.05, 0.05));
    out.push_back(std::move(img));
  }
  return out;
}

ClassificationSet teacher_labels(const ViTWeights& weights, const PromptBank& teacher_bank,
                                 const TensorMap& teacher_head, const ExpresOptions& options,
                                 std::vector<Tensor> images, std::size_t num_classes) {
  const Tensor& w = teacher_head.at("head.W");
  const Tensor& b = teacher_head.at("head.b");
  if (w.dim(1) != num_classes) throw ShapeError("teacher head width does not match class count");
  std::vector<Tensor> logits;
  for (const Tensor& img : images) {
    logits.push_back(classify(expres_forward(img, weights, teacher_bank, options).y, w, b));
  }
  ClassificationSet out;
  out.num_classes = num_classes;
  if (num_classes == 2) {
    std::vector<double> score;
    for (const Tensor& l : logits) score.push_back(static_cast<double>(l[1]) - l[0]);
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted.empty() ? 0.0 : sorted[sorted.size() / 2];
    for (double v : score) out.labels.push_back(v >= median ? 1 : 0);
  } else {
    for (const Tensor& l : logits) {
      out.labels.push_back(static_cast<int>(std::max_element(l.values().begin(), l.values().end()) -
                                            l.values().begin()));
    }
  }
  out.images = std::move(images);
  return out;
}

TeacherTask make_teacher_task(const ViTWeights& weights, const ResidualSiteConfig& sites, std::size_t prompts,
                              std::size_t count, std::size_t num_classes, float delta_std, std::uint64_t seed) {
  const ViTConfig& cfg = weights.config;
  TeacherTask t;
  t.bank = init_prompts(sites, cfg, prompts, derive_seed(seed, "teacher-prompts"));
  Rng rng(derive_seed(seed, "teacher-weights"));
  t.bank.p0 = trunc_normal_tensor(t.bank.p0.dims(), delta_std, rng);
  for (auto& [key, delta] : t.bank.residuals) delta = trunc_normal_tensor(delta.dims(), delta_std, rng);
  t.head.emplace("head.W", trunc_normal_tensor({cfg.dim, num_classes}, 1.0f, rng));
  t.head.emplace("head.b", Tensor::zeros({num_classes}));
  t.options.sites = sites;
  t.data = teacher_labels(weights, t.bank, t.head, t.options,
                          gen_smooth_images(count, cfg.channels, cfg.image_size, derive_seed(seed, "teacher-images")),
                          num_classes);
  return t;
}

void save_dataset(const ClassificationSet& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  json index;
  index["kind"] = "classification";
  index["num_classes"] = data.num_classes;
  json items = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string file = "images/" + item_name(i);
    save_tensor(dir / file, data.images[i]);
    items.push_back({{"file", file}, {"label", data.labels[i]}});
  }
  index["items"] = std::move(items);
  write_index(dir, index);
}

void save_dataset(const SegmentationSet& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  json index;
  index["kind"] = "segmentation";
  index["num_categories"] = data.num_categories;
  json items = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string file = "images/" + item_name(i);
    const std::string mask = "masks/" + item_name(i);
    save_tensor(dir / file, data.images[i]);
    save_tensor(dir / mask, data.label_maps[i]);
    items.push_back({{"file", file}, {"mask", mask}, {"category", data.categories[i]}});
  }
  index["items"] = std::move(items);
  write_index(dir, index);
}

std::string dataset_kind(const std::filesystem::path& dir) {
  const json index = read_index(dir);
  if (!index.contains("kind") || !index["kind"].is_string()) throw FormatError("index.json: missing 'kind'");
  return index["kind"].get<std::string>();
}

ClassificationSet load_classification(const std::filesystem::path& dir) {
  const json index = read_index(dir);
  ClassificationSet out;
  try {
    if (index.at("kind") != "classification") throw FormatError("index.json: dataset is not a classification set");
    out.num_classes = index.at("num_classes").get<std::size_t>();
    for (const auto& item : index.at("items")) {
      out.images.push_back(load_tensor(dir / item.at("file").get<std::string>()));
      out.labels.push_back(item.at("label").get<int>());
    }
  } catch (const json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
  return out;
}

SegmentationSet load_segmentation(const std::filesystem::path& dir) {
  const json index = read_index(dir);
  SegmentationSet out;
  try {
    if (index.at("kind") != "segmentation") throw FormatError("index.json: dataset is not a segmentation set");
    out.num_categories = index.at("num_categories").get<std::size_t>();
    for (const auto& item : index.at("items")) {
      out.images.push_back(load_tensor(dir / item.at("file").get<std::string>()));
      out.label_maps.push_back(load_tensor(dir / item.at("mask").get<std::string>()));
      out.categories.push_back(item.at("category").get<int>());
      out.shapes.emplace_back();
      const Tensor& img = out.images.back();
      const Tensor& m = out.label_maps.back();
      if (img.rank() != 3 || m.rank() != 2 || m.dim(0) != img.dim(1) || m.dim(1) != img.dim(2)) {
        throw FormatError("dataset item " + item.at("file").get<std::string>() + ": mask dims " + to_string(m.dims()) +
                          " do not match image " + to_string(img.dims()));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("index.json: " + std::string(e.what()));
  }
  return out;
}

Tensor resize_image(const Tensor& image, std::size_t size) {
  if (image.dim(1) == size && image.dim(2) == size) return image;
  return bilinear_resize(image, size, size);
}

Tensor resize_mask_nearest(const Tensor& mask, std::size_t size) {
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  if (h == size && w == size) return mask;
  Tensor out({size, size});
  for (std::size_t y = 0; y < size; ++y) {
    const std::size_t sy = std::min(h - 1, static_cast<std::size_t>((y + 0.5) * h / size));
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t sx = std::min(w - 1, static_cast<std::size_t>((x + 0.5) * w / size));
      out[y * size + x] = mask[sy * w + sx];
    }
  }
  return out;
}

}  // namespace expres
