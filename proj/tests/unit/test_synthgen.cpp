#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "dpersona/dataset.hpp"
#include "dpersona/synthgen.hpp"
#include "oracles.hpp"

using namespace dpersona;
using namespace dpersona::synthgen;
namespace fs = std::filesystem;

namespace {

double brute_distance2(const BinaryMask& m, int y, int x, std::uint8_t target) {
  double best = std::numeric_limits<double>::infinity();
  for (int v = 0; v < m.height; ++v)
    for (int u = 0; u < m.width; ++u)
      if ((m.at(v, u) != 0) == (target != 0)) best = std::min(best, double((v - y) * (v - y) + (u - x) * (u - x)));
  return best;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dpersona_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("generation is a pure function of the seed") {
  const auto profiles = default_profiles(4);
  const auto a = generate_sample(5, "train-0001", 64, 64, profiles);
  const auto b = generate_sample(5, "train-0001", 64, 64, profiles);
  CHECK(a.image == b.image);
  CHECK(a.annotations == b.annotations);
  CHECK(a.true_mask == b.true_mask);
  const auto c = generate_sample(5, "train-0002", 64, 64, profiles);
  CHECK(c.image != a.image);
}

TEST_CASE("zero Fourier amplitudes give an exact ellipse") {
  ShapeParams s;
  s.center_y = 30.3;
  s.center_x = 33.1;
  s.radius_y = 9.5;
  s.radius_x = 14.2;
  s.rotation = 0.6;
  const auto m = rasterize(s, 64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      // point inside iff its coordinates in the ellipse frame satisfy (u/a)^2 + (v/b)^2 <= 1
      const double px = x - s.center_x, py = y - s.center_y;
      const double u = px * std::cos(-s.rotation) - py * std::sin(-s.rotation);
      const double v = px * std::sin(-s.rotation) + py * std::cos(-s.rotation);
      const double q = u * u / (s.radius_x * s.radius_x) + v * v / (s.radius_y * s.radius_y);
      if (std::abs(q - 1.0) > 1e-9) CHECK(m.at(y, x) == (q <= 1.0 ? 1 : 0));
    }
  }
}

TEST_CASE("corpus statistics over 1000 samples") {
  const auto profiles = default_profiles(4);
  double fraction = 0.0;
  std::vector<double> area(4, 0.0);
  for (int i = 0; i < 1000; ++i) {
    const auto s = generate_sample(7, data::sample_id("train", i), 64, 64, profiles);
    fraction += double(foreground_count(s.true_mask)) / s.true_mask.size() / 1000;
    if (i < 500)
      for (int r = 0; r < 4; ++r) area[r] += double(foreground_count(s.annotations[r])) / 500;
    for (const auto& a : s.annotations) {
      CHECK(foreground_count(a) > 0);
      for (auto v : a.data) REQUIRE(v <= 1);
    }
    CHECK(foreground_count(s.true_mask) > 0);
  }
  INFO("mean foreground fraction " << fraction);
  CHECK(fraction >= 0.03);
  CHECK(fraction <= 0.25);
  CHECK(area[0] < area[3]);
  for (int r = 0; r + 1 < 4; ++r) CHECK(area[r] < area[r + 1]);
}

TEST_CASE("rater profiles") {
  Rng rng(3);
  const auto s = generate_sample(11, "test-0000", 64, 64, default_profiles(4));
  Rng r1(1);
  CHECK(rater_annotate(s.true_mask, RaterProfile{0, 0.0, 0.0, 0.0}, r1) == s.true_mask);
  Rng r2(2), r3(2);
  const auto big = rater_annotate(s.true_mask, RaterProfile{0, 2.0, 0.0, 0.0}, r2);
  const auto small = rater_annotate(s.true_mask, RaterProfile{0, -2.0, 0.0, 0.0}, r3);
  CHECK(foreground_count(big) >= foreground_count(small));
  for (std::size_t i = 0; i < big.size(); ++i) CHECK(big.data[i] >= small.data[i]);
  CHECK_THROWS(validate_profiles({RaterProfile{0, 1.0, 0, 0}, RaterProfile{1, 0.5, 0, 0}}));
  CHECK_THROWS(RaterProfile{0, 0.0, 0.0, 0.2}.validate());
  const auto d = default_profiles(4);
  for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i].boundary_offset > d[i - 1].boundary_offset);
}

TEST_CASE("exact distance transform and morphology against brute force") {
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    const auto m = oracle::random_mask(rng, 9 + it % 5, 7 + it % 4, 0.15);
    for (std::uint8_t target : {std::uint8_t{0}, std::uint8_t{1}}) {
      const auto d = squared_distance_to(m, target);
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) CHECK(d.at(y, x) == brute_distance2(m, y, x, target));
    }
    for (double r : {-2.0, -1.5, 1.0, 2.5}) {
      const auto o = morphological_offset(m, r);
      for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
          const bool expect = r > 0 ? brute_distance2(m, y, x, 1) <= r * r : brute_distance2(m, y, x, 0) > r * r;
          CHECK(o.at(y, x) == (expect ? 1 : 0));
        }
      }
    }
  }
}

TEST_CASE("smooth warp") {
  Rng rng(6);
  const auto m = generate_sample(3, "val-0000", 64, 64, default_profiles(4)).true_mask;
  Rng a(1), b(1);
  CHECK(smooth_warp(m, 0.0, a) == m);
  const auto w1 = smooth_warp(m, 1.5, b);
  Rng c(1);
  CHECK(smooth_warp(m, 1.5, c) == w1);
  // Every warped pixel came from within the amplitude bound.
  const auto d2 = squared_distance_to(m, 1);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (w1.at(y, x)) CHECK(d2.at(y, x) <= 2 * (1.5 + 0.5) * (1.5 + 0.5));
}

TEST_CASE("dataset archives") {
  data::DatasetConfig bad;
  bad.raters = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const data::DatasetConfig cfg;
  const auto a = temp_dir("ds_a"), b = temp_dir("ds_b");
  const auto ma = data::build_dataset(cfg, a, false);
  data::build_dataset(cfg, b, false);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
  }
  CHECK_THROWS(data::build_dataset(cfg, a, false));
  CHECK_NOTHROW(data::build_dataset(cfg, a, true));

  REQUIRE(ma.test_mean_area.size() == 4);
  std::vector<double> rank{1, 2, 3, 4};
  CHECK(data::spearman(rank, ma.test_mean_area) >= 0.9);
  for (int r = 1; r < 4; ++r) CHECK(ma.test_mean_area[r] > ma.test_mean_area[r - 1]);

  const auto split = data::read_split(a / "test", "test");
  const auto fresh = data::generate_split(cfg, "test");
  REQUIRE(split.samples.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(split.samples[i].sample_id == fresh.samples[i].sample_id);
    CHECK(split.samples[i].image == fresh.samples[i].image);
    CHECK(split.samples[i].annotations == fresh.samples[i].annotations);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("spearman") {
  CHECK(data::spearman({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0));
  CHECK(data::spearman({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(data::spearman({1, 2, 3, 4}, {1, 1, 2, 2}) == doctest::Approx(0.894427191).epsilon(1e-8));
}
