#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpersona/synthgen.hpp"
#include "json.hpp"

// On-disk layout of a generated benchmark:
//   <dir>/manifest.json
//   <dir>/<split>/images.npy       float32 [N,1,H,W]
//   <dir>/<split>/annotations.npy  uint8   [N,R,H,W]
//   <dir>/<split>/true_masks.npy   uint8   [N,H,W]
//   <dir>/<split>/sample_ids.json  ["<split>-0000", ...]
namespace dpersona::data {

inline constexpr std::array<const char*, 3> kSplits{"train", "val", "test"};

struct DatasetConfig {
  int height = 64;
  int width = 64;
  int raters = 4;
  int train = 200;
  int val = 20;
  int test = 50;
  std::uint64_t seed = 7;
  /// Empty means synthgen::default_profiles(raters).
  std::vector<synthgen::RaterProfile> profiles;

  std::vector<synthgen::RaterProfile> resolved_profiles() const;
  void validate() const;
  int count(const std::string& split) const;
};

struct DatasetManifest {
  int generator_version = synthgen::kGeneratorVersion;
  int height = 0, width = 0, raters = 0;
  int train = 0, val = 0, test = 0;
  std::uint64_t master_seed = 0;
  std::vector<synthgen::RaterProfile> profiles;
  /// Mean annotation area per rater over the test split.
  std::vector<double> test_mean_area;
};

struct Split {
  std::string name;
  int height = 0, width = 0, raters = 0;
  std::vector<synthgen::MultiRaterSample> samples;
};

std::string sample_id(const std::string& split, int index);

/// Samples of one split, in index order.
Split generate_split(const DatasetConfig& config, const std::string& split);

/// Writes all splits and manifest.json under `dir`. An existing `dir`
/// is refused unless `force`.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& dir, bool force);

void write_split(const std::filesystem::path& split_dir, const Split& split);
Split read_split(const std::filesystem::path& split_dir, const std::string& name);

nlohmann::json to_json(const synthgen::RaterProfile& p);
synthgen::RaterProfile profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dpersona::data
