#pragma once

// Run configuration: strict JSON parsing with every violation reported.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "expres/trainer.hpp"
#include "json.hpp"

namespace expres {

enum class TaskKind { Classification, Episodes };

struct BackboneConfig {
  std::optional<std::string> checkpoint;
  float init_std = 0.02f;
  std::size_t pretrain_epochs = 0;  // toy checkpoints: full fine-tuning on synthetic shapes
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | teacher | directory
  std::string train, val;            // directory source
  std::size_t count = 64;
  std::size_t val_count = 0;
  std::size_t categories = 4;        // synthetic segmentation
  float delta_std = 0.5f;            // teacher source
  std::size_t teacher_prompts = 0;   // 0: same M as the student
};

struct EpisodesConfig {
  std::size_t count = 100;
  DenseFeature feature = DenseFeature::Keys;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ViTConfig vit;
  AdaptationSpec adaptation;
  TrainConfig train;
  TaskKind task = TaskKind::Classification;
  BackboneConfig backbone;
  DataConfig data;
  EpisodesConfig episodes;
  std::string out = "out";

  // Cross-field checks; empty when consistent.
  std::vector<std::string> violations() const;
};

// ConfigError (with every violation) on unknown keys, wrong types, ranges and
// cross-field inconsistencies; IoError when the file cannot be read.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_json(const nlohmann::json& j);
// Normalised echo with defaults filled in.
nlohmann::ordered_json config_to_json(const RunConfig& cfg);

const char* feature_name(DenseFeature f);
std::optional<DenseFeature> parse_feature(std::string_view name);
// "LN,Q,K" -> sites; unknown names raise ConfigError.
std::vector<ResidualSite> parse_site_list(const std::string& csv);

}  // namespace expres
