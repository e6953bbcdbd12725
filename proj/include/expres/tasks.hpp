#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "expres/expres.hpp"

namespace expres {

// ---------------------------------------------------------------------------
// Heads. depth 1: head.W [d,C], head.b [C]. depth k > 1 prepends k-1 GELU
// layers head.fc{i}.W [d,d], head.fc{i}.b [d].

TensorMap init_head(std::size_t in, std::size_t classes, std::size_t depth, std::uint64_t seed);
// features [d] or [B,d] -> logits [B,C]
Var apply_head(Graph& g, Var features, std::size_t depth);
// logits = y^T W + b
Tensor classify(const Tensor& y, const Tensor& w, const Tensor& b);

// ---------------------------------------------------------------------------
// Data

struct ClassificationSet {
  std::vector<Tensor> images;  // [C,H,W] in [0,1]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::size_t size() const { return images.size(); }
};

struct PlantedShape {
  enum Kind { Circle, Square, Triangle, Diamond } kind = Circle;
  double cx = 0, cy = 0, radius = 0;
  int category = 0;
  // Pixel-centre containment test used to rasterise the mask.
  bool contains(double x, double y) const;
};

struct SegmentationSet {
  std::vector<Tensor> images;      // [C,H,W] in [0,1]
  std::vector<Tensor> label_maps;  // [H,W]; 0 background, c+1 for category c
  std::vector<int> categories;     // primary category of each image
  std::vector<std::vector<PlantedShape>> shapes;  // in drawing order (later shapes on top)
  std::size_t num_categories = 0;
  std::size_t size() const { return images.size(); }
};

struct LabeledImage {
  Tensor image;
  Tensor mask;  // binary [H,W]
  std::size_t index = 0;  // position in the source dataset
};

struct Episode {
  std::vector<LabeledImage> support;
  LabeledImage query;
  int category = 0;
  std::uint64_t seed = 0;
};

struct SyntheticSpec {
  std::size_t count = 64;
  std::size_t image_size = 32;
  std::size_t num_classes = 4;
  std::size_t channels = 3;
};

// Class c plants a zero-mean stripe texture with orientation c at a random
// position and phase; the class is a second-order statistic of one region.
ClassificationSet gen_synthetic_classification(const SyntheticSpec& spec, std::uint64_t seed);
// Coloured geometric shapes (category = shape + colour) on textured
// background, sometimes with a distractor of another category.
SegmentationSet gen_synthetic_segmentation(const SyntheticSpec& spec, std::uint64_t seed);

// Smooth random images for teacher-student tasks.
std::vector<Tensor> gen_smooth_images(std::size_t count, std::size_t channels, std::size_t size, std::uint64_t seed);

// Labels from a hidden teacher: argmax of the teacher's logits. For C = 2 the
// decision threshold is the median score so both classes are equally frequent.
ClassificationSet teacher_labels(const ViTWeights& weights, const PromptBank& teacher_bank,
                                 const TensorMap& teacher_head, const ExpresOptions& options,
                                 std::vector<Tensor> images, std::size_t num_classes);

// Hidden EXPRES teacher over the frozen encoder: P0 and every residual drawn
// from truncated normal(delta_std), head.W from truncated normal(1), zero bias.
struct TeacherTask {
  PromptBank bank;
  TensorMap head;
  ExpresOptions options;
  ClassificationSet data;  // smooth images labelled by the teacher
};
TeacherTask make_teacher_task(const ViTWeights& weights, const ResidualSiteConfig& sites, std::size_t prompts,
                              std::size_t count, std::size_t num_classes, float delta_std, std::uint64_t seed);

void save_dataset(const ClassificationSet& data, const std::filesystem::path& dir);
void save_dataset(const SegmentationSet& data, const std::filesystem::path& dir);
std::string dataset_kind(const std::filesystem::path& dir);
ClassificationSet load_classification(const std::filesystem::path& dir);
SegmentationSet load_segmentation(const std::filesystem::path& dir);

Tensor resize_image(const Tensor& image, std::size_t size);          // bilinear
Tensor resize_mask_nearest(const Tensor& mask, std::size_t size);    // nearest neighbour

// ---------------------------------------------------------------------------
// Segmentation

// Patch features of the last layer -> head -> [2, g, g] -> bilinear to [2, out_h, out_w].
Var segment_logits(Graph& g, const ViTConfig& cfg, const Tensor& model_image, std::size_t out_h, std::size_t out_w,
                   std::size_t prompts, const ExpresOptions& options, DenseFeature feature);
Tensor segment_forward(const Tensor& image, const ViTWeights& weights, const PromptBank& bank, const TensorMap& head,
                       const ExpresOptions& options, DenseFeature feature = DenseFeature::Keys);
// Reshapes per-patch logits [N, C] into [C, out_h, out_w]; N must be a square.
Var upsample_patch_logits(Graph& g, Var patch_logits, std::size_t out_h, std::size_t out_w);

// Mean over pixels of the per-pixel cross-entropy; mask values in {0..C-1}.
Var dense_ce(Graph& g, Var logits, const Tensor& mask);
float dense_ce(const Tensor& logits, const Tensor& mask);
// argmax over the class axis of [C,H,W] -> [H,W]
Tensor predict_mask(const Tensor& logits);

// Dataset-level IoU: counts accumulate over all added masks before dividing.
class IoUAccumulator {
 public:
  explicit IoUAccumulator(std::size_t classes) : inter_(classes, 0), uni_(classes, 0) {}
  void add(const Tensor& pred, const Tensor& truth);
  void merge(const IoUAccumulator& other);
  // Mean IoU over classes with a non-empty union.
  double miou() const;
  double iou(std::size_t cls) const;

 private:
  std::vector<std::uint64_t> inter_, uni_;
};

double miou(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth, std::size_t classes);

// Five support images and one disjoint query of `category`, masks binarised.
Episode sample_episode(const SegmentationSet& data, int category, std::uint64_t seed);

}  // namespace expres
