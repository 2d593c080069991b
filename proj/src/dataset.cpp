#include "dpersona/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dpersona/npy.hpp"

namespace dpersona::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<synthgen::RaterProfile> DatasetConfig::resolved_profiles() const {
  return profiles.empty() ? synthgen::default_profiles(raters) : profiles;
}

void DatasetConfig::validate() const {
  if (raters < 2) throw std::invalid_argument("dataset: raters must be >= 2");
  if (train < 1 || val < 1 || test < 1) throw std::invalid_argument("dataset: split sizes must be >= 1");
  if (height < 32 || width < 32) throw std::invalid_argument("dataset: height and width must be >= 32");
  if (height % 4 != 0 || width % 4 != 0) throw std::invalid_argument("dataset: height and width must be multiples of 4");
  const auto p = resolved_profiles();
  if (static_cast<int>(p.size()) != raters) throw std::invalid_argument("dataset: profile count must equal raters");
  synthgen::validate_profiles(p);
}

int DatasetConfig::count(const std::string& split) const {
  if (split == "train") return train;
  if (split == "val") return val;
  if (split == "test") return test;
  throw std::invalid_argument("unknown split '" + split + "'");
}

std::string sample_id(const std::string& split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%04d", index);
  return split + buf;
}

Split generate_split(const DatasetConfig& config, const std::string& split) {
  config.validate();
  const auto profiles = config.resolved_profiles();
  Split s{split, config.height, config.width, config.raters, {}};
  const int n = config.count(split);
  for (int i = 0; i < n; ++i) {
    s.samples.push_back(
        synthgen::generate_sample(config.seed, sample_id(split, i), config.height, config.width, profiles));
  }
  return s;
}

void write_split(const fs::path& split_dir, const Split& split) {
  fs::create_directories(split_dir);
  const auto n = static_cast<std::int64_t>(split.samples.size());
  const std::int64_t h = split.height, w = split.width, r = split.raters;
  std::vector<float> images;
  std::vector<std::uint8_t> annotations, masks;
  json ids = json::array();
  for (const auto& s : split.samples) {
    if (static_cast<int>(s.annotations.size()) != split.raters) throw std::invalid_argument("sample rater count mismatch");
    images.insert(images.end(), s.image.data.begin(), s.image.data.end());
    for (const auto& a : s.annotations) annotations.insert(annotations.end(), a.data.begin(), a.data.end());
    masks.insert(masks.end(), s.true_mask.data.begin(), s.true_mask.data.end());
    ids.push_back({{"id", s.sample_id}, {"seed", s.seed}});
  }
  io::write_npy<float>(split_dir / "images.npy", {n, 1, h, w}, images);
  io::write_npy<std::uint8_t>(split_dir / "annotations.npy", {n, r, h, w}, annotations);
  io::write_npy<std::uint8_t>(split_dir / "true_masks.npy", {n, h, w}, masks);
  std::ofstream(split_dir / "sample_ids.json") << ids.dump(1) << "\n";
}

Split read_split(const fs::path& split_dir, const std::string& name) {
  const auto images = io::read_npy<float>(split_dir / "images.npy");
  const auto annotations = io::read_npy<std::uint8_t>(split_dir / "annotations.npy");
  const auto masks = io::read_npy<std::uint8_t>(split_dir / "true_masks.npy");
  if (images.shape.size() != 4 || images.shape[1] != 1) throw std::runtime_error("images.npy must be [N,1,H,W]");
  if (annotations.shape.size() != 4) throw std::runtime_error("annotations.npy must be [N,R,H,W]");
  if (masks.shape.size() != 3) throw std::runtime_error("true_masks.npy must be [N,H,W]");
  const auto n = images.shape[0], h = images.shape[2], w = images.shape[3];
  if (annotations.shape[0] != n || annotations.shape[2] != h || annotations.shape[3] != w || masks.shape[0] != n ||
      masks.shape[1] != h || masks.shape[2] != w) {
    throw std::runtime_error("inconsistent array shapes in " + split_dir.string());
  }
  json ids;
  std::ifstream(split_dir / "sample_ids.json") >> ids;
  if (!ids.is_array() || static_cast<std::int64_t>(ids.size()) != n) throw std::runtime_error("sample_ids.json does not match N");

  Split s{name, static_cast<int>(h), static_cast<int>(w), static_cast<int>(annotations.shape[1]), {}};
  const std::size_t hw = static_cast<std::size_t>(h * w);
  for (std::int64_t i = 0; i < n; ++i) {
    synthgen::MultiRaterSample m;
    m.sample_id = ids[i].at("id").get<std::string>();
    m.seed = ids[i].at("seed").get<std::uint64_t>();
    m.image = Image(s.height, s.width, std::vector<float>(images.data.begin() + i * hw, images.data.begin() + (i + 1) * hw));
    for (int r = 0; r < s.raters; ++r) {
      const auto off = (static_cast<std::size_t>(i) * s.raters + r) * hw;
      m.annotations.emplace_back(s.height, s.width,
                                 std::vector<std::uint8_t>(annotations.data.begin() + off, annotations.data.begin() + off + hw));
    }
    m.true_mask = BinaryMask(s.height, s.width,
                             std::vector<std::uint8_t>(masks.data.begin() + i * hw, masks.data.begin() + (i + 1) * hw));
    s.samples.push_back(std::move(m));
  }
  return s;
}

json to_json(const synthgen::RaterProfile& p) {
  return {{"rank_index", p.rank_index},
          {"boundary_offset", p.boundary_offset},
          {"deformation_amplitude", p.deformation_amplitude},
          {"flip_noise", p.flip_noise}};
}

synthgen::RaterProfile profile_from_json(const json& j) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "rank_index" && key != "boundary_offset" && key != "deformation_amplitude" && key != "flip_noise") {
      throw std::invalid_argument("unknown rater profile key '" + key + "'");
    }
  }
  synthgen::RaterProfile p;
  p.rank_index = j.at("rank_index").get<int>();
  p.boundary_offset = j.at("boundary_offset").get<double>();
  p.deformation_amplitude = j.at("deformation_amplitude").get<double>();
  p.flip_noise = j.at("flip_noise").get<double>();
  return p;
}

json to_json(const DatasetManifest& m) {
  json profiles = json::array();
  for (const auto& p : m.profiles) profiles.push_back(to_json(p));
  return {{"generator_version", m.generator_version},
          {"height", m.height},
          {"width", m.width},
          {"raters", m.raters},
          {"counts", {{"train", m.train}, {"val", m.val}, {"test", m.test}}},
          {"master_seed", m.master_seed},
          {"profiles", profiles},
          {"test_mean_area", m.test_mean_area},
          {"format", {{"container", "npy"},
                      {"images", "float32 [N,1,H,W]"},
                      {"annotations", "uint8 [N,R,H,W]"},
                      {"true_masks", "uint8 [N,H,W]"}}}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.generator_version = j.at("generator_version").get<int>();
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  m.raters = j.at("raters").get<int>();
  m.train = j.at("counts").at("train").get<int>();
  m.val = j.at("counts").at("val").get<int>();
  m.test = j.at("counts").at("test").get<int>();
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  for (const auto& p : j.at("profiles")) m.profiles.push_back(profile_from_json(p));
  m.test_mean_area = j.at("test_mean_area").get<std::vector<double>>();
  return m;
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no dataset manifest in " + dir.string() + " (run gen-data first)");
  json j;
  in >> j;
  return manifest_from_json(j);
}

DatasetManifest build_dataset(const DatasetConfig& config, const fs::path& dir, bool force) {
  config.validate();
  if (fs::exists(dir)) {
    if (!force) throw std::runtime_error("output directory " + dir.string() + " exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  DatasetManifest m;
  m.height = config.height;
  m.width = config.width;
  m.raters = config.raters;
  m.train = config.train;
  m.val = config.val;
  m.test = config.test;
  m.master_seed = config.seed;
  m.profiles = config.resolved_profiles();
  for (const char* name : kSplits) {
    const auto split = generate_split(config, name);
    if (std::string(name) == "test") {
      m.test_mean_area.assign(config.raters, 0.0);
      for (const auto& s : split.samples)
        for (int r = 0; r < config.raters; ++r) m.test_mean_area[r] += static_cast<double>(foreground_count(s.annotations[r]));
      for (auto& a : m.test_mean_area) a /= static_cast<double>(split.samples.size());
    }
    write_split(dir / name, split);
  }
  std::ofstream(dir / "manifest.json") << to_json(m).dump(2) << "\n";
  return m;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs two equal-length vectors");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace dpersona::data
