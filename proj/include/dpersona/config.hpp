#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpersona/dataset.hpp"
#include "dpersona/fusion.hpp"
#include "dpersona/model.hpp"
#include "dpersona/stage1.hpp"
#include "dpersona/stage2.hpp"
#include "json.hpp"

// Experiment configuration: one JSON document with sections synthgen, model,
// stage1, stage2, metrics and baselines. Missing keys take defaults; unknown
// keys are errors. Precedence: defaults < config file < --set overrides <
// dedicated flags such as --seed.
namespace dpersona::config {

struct MetricsConfig {
  std::vector<int> sampling_numbers{10, 30, 50};
  std::uint64_t seed = 2024;
  /// Stage-II prior bank size at evaluation (fixed_per_image policy).
  int bank_size = 100;
};

struct BaselinesConfig {
  int epochs = 100;
  double learning_rate = 1e-4;
  int batch_size = 16;
  double l2 = 1e-5;
  std::uint64_t seed = 1;
  fusion::StapleOptions staple;
};

struct ExperimentConfig {
  data::DatasetConfig synthgen;
  model::ArchitectureConfig model;
  stage1::Stage1Config stage1;
  stage2::Stage2Config stage2;
  MetricsConfig metrics;
  BaselinesConfig baselines;

  /// Also checks cross-section consistency (model.raters == synthgen.raters).
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Throws std::invalid_argument naming the first unknown or ill-typed key.
ExperimentConfig from_json(const nlohmann::json& j);

ExperimentConfig load(const std::filesystem::path& path);

/// Applies "section.key=value" (value parsed as JSON, falling back to a string).
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// FNV-1a of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string hash_json(const nlohmann::json& j);
std::string config_hash(const ExperimentConfig& c);
/// Hash of the sections every downstream stage must share: synthgen and model.
std::string upstream_hash(const ExperimentConfig& c);

}  // namespace dpersona::config
