#include <algorithm>

#include "doctest.h"
#include "dpersona/metrics.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace dpersona;
using namespace dpersona::metrics;

namespace {

BinaryMask mask(int h, int w, std::vector<std::uint8_t> v) { return BinaryMask(h, w, std::move(v)); }
ProbabilityMap probs(int h, int w, std::vector<float> v) { return ProbabilityMap(h, w, std::move(v)); }

}  // namespace

TEST_CASE("iou and dice on hand-counted masks") {
  const auto a = mask(1, 4, {1, 1, 0, 0});
  const auto b = mask(1, 4, {1, 0, 0, 0});
  CHECK(iou(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(dice(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(iou(a, a) == 1.0);
  CHECK(dice(a, a) == 1.0);
  const auto c = mask(1, 4, {0, 0, 1, 1});
  CHECK(iou(a, c) == 0.0);
  CHECK(dice(a, c) == 0.0);
  const auto empty = mask(1, 4, {0, 0, 0, 0});
  CHECK(iou(empty, empty) == 1.0);
  CHECK(dice(empty, empty) == 1.0);
  CHECK_THROWS_AS(dice(a, mask(2, 2, {1, 0, 0, 0})), std::invalid_argument);
}

TEST_CASE("ged of identical sets is zero and of a half-overlap pair is one") {
  const std::vector<BinaryMask> s{mask(1, 4, {1, 1, 0, 0}), mask(1, 4, {0, 1, 1, 0}), mask(1, 4, {0, 0, 0, 0})};
  CHECK(ged(s, s) == 0.0);
  // d(p, a) = 1 - IoU = 0.5: GED = 2 * 0.5 - 0 - 0.
  const std::vector<BinaryMask> p{mask(1, 4, {1, 1, 0, 0})}, a{mask(1, 4, {1, 0, 0, 0})};
  CHECK(ged(p, a) == 1.0);
  CHECK_THROWS(ged(std::vector<BinaryMask>{}, a));
}

TEST_CASE("dice_soft hand evaluation") {
  const std::vector<ProbabilityMap> p{probs(1, 2, {1, 1}), probs(1, 2, {1, 0})};
  const std::vector<BinaryMask> a{mask(1, 2, {1, 1}), mask(1, 2, {1, 1})};
  // P_soft = [1, .5], A_soft = [1, 1]; dice 1 at tau .1/.3 and 2/3 at .5/.7/.9.
  CHECK(dice_soft(p, a) == doctest::Approx(0.8).epsilon(1e-15));
  const std::vector<ProbabilityMap> same{probs(1, 2, {1, 0})};
  const std::vector<BinaryMask> ann{mask(1, 2, {1, 0})};
  CHECK(dice_soft(same, ann) == 1.0);
}

TEST_CASE("dice_matrix orientation and identity case") {
  const std::vector<BinaryMask> a{mask(2, 2, {1, 0, 0, 0}), mask(2, 2, {0, 1, 1, 0}), mask(2, 2, {0, 0, 0, 1})};
  const auto m = dice_matrix(std::span<const BinaryMask>(a), a);
  REQUIRE(m.rows == 3);
  REQUIRE(m.cols == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(m.at(i, j) == (i == j ? 1.0 : 0.0));
  const std::vector<BinaryMask> p{mask(1, 4, {1, 1, 0, 0})}, q{mask(1, 4, {1, 0, 0, 0})};
  CHECK(dice_matrix(std::span<const BinaryMask>(p), q).at(0, 0) == dice(p[0], q[0]));
  const std::vector<BinaryMask> two{p[0], q[0]};
  const auto rect = dice_matrix(std::span<const BinaryMask>(two), q);
  CHECK(rect.rows == 2);
  CHECK(rect.cols == 1);
}

TEST_CASE("dice_max and dice_match worked example") {
  DiceMatrix m(2, 2);
  m.values = {0.9, 0.8, 0.85, 0.2};
  CHECK(dice_max(m) == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(dice_match(m) == doctest::Approx(0.825).epsilon(1e-15));
  const auto asg = max_weight_assignment(m);
  CHECK(asg == std::vector<int>{1, 0});
}

TEST_CASE("dice_match picks the diagonal of a diagonal-dominant matrix") {
  DiceMatrix m(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m.at(i, j) = i == j ? 0.9 : 0.1 * (i + j) / 6.0;
  CHECK(max_weight_assignment(m) == std::vector<int>{0, 1, 2, 3});
  CHECK(dice_match(m) == doctest::Approx(0.9));
  DiceMatrix wide(3, 4);
  CHECK_THROWS_AS(dice_match(wide), std::invalid_argument);
}

TEST_CASE("assignment equals exhaustive enumeration on random 6x4 matrices") {
  Rng rng(11);
  for (int it = 0; it < 200; ++it) {
    DiceMatrix m(6, 4);
    oracle::Matrix ref(6, std::vector<double>(4));
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 4; ++j) m.at(i, j) = ref[i][j] = uniform(rng, 0, 1);
    CHECK(dice_match(m) == oracle::dice_match_exhaustive(ref));
    auto a = max_weight_assignment(m);
    std::sort(a.begin(), a.end());
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  }
}

TEST_CASE("per-rater dice") {
  const std::vector<BinaryMask> a{mask(1, 4, {1, 1, 0, 0}), mask(1, 4, {0, 1, 1, 1})};
  std::vector<ProbabilityMap> perfect;
  for (const auto& m : a) perfect.push_back(probs(1, 4, {float(m.data[0]), float(m.data[1]), float(m.data[2]), float(m.data[3])}));
  const auto r = per_rater_dice(perfect, a);
  CHECK(r.per_rater == std::vector<double>{1.0, 1.0});
  CHECK(r.mean == 1.0);
  const std::vector<ProbabilityMap> one{probs(1, 4, {0.9f, 0.1f, 0.1f, 0.1f})};
  const std::vector<BinaryMask> ann{a[0]};
  CHECK(per_rater_dice(one, ann).per_rater[0] == dice(binarize(one[0]), a[0]));
  CHECK_THROWS(per_rater_dice(one, a));
}

TEST_CASE("metrics are invariant to ordering within sets") {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    std::vector<ProbabilityMap> p;
    std::vector<BinaryMask> pb, a;
    for (int i = 0; i < 5; ++i) {
      p.push_back(oracle::random_probabilities(rng, 6, 7));
      pb.push_back(binarize(p.back()));
    }
    for (int j = 0; j < 3; ++j) a.push_back(oracle::random_mask(rng, 6, 7, 0.5));
    auto p2 = p;
    auto pb2 = pb;
    auto a2 = a;
    std::reverse(p2.begin(), p2.end());
    std::reverse(pb2.begin(), pb2.end());
    std::rotate(a2.begin(), a2.begin() + 1, a2.end());
    CHECK(ged(pb2, a2) == doctest::Approx(ged(pb, a)).epsilon(1e-12));
    CHECK(dice_soft(p2, a2) == doctest::Approx(dice_soft(p, a)).epsilon(1e-12));
    CHECK(dice_max(dice_matrix(std::span<const BinaryMask>(pb2), a)) == dice_max(dice_matrix(std::span<const BinaryMask>(pb), a)));
  }
}

TEST_CASE("evaluate_sample and aggregate") {
  Rng rng(9);
  std::vector<ProbabilityMap> p;
  std::vector<BinaryMask> a;
  for (int i = 0; i < 3; ++i) p.push_back(oracle::random_probabilities(rng, 8, 8));
  for (int j = 0; j < 4; ++j) a.push_back(oracle::random_mask(rng, 8, 8, 0.4));
  const auto few = evaluate_sample("x", p, a, {});
  CHECK_FALSE(few.dice_max.has_value());
  p.push_back(oracle::random_probabilities(rng, 8, 8));
  const auto s = evaluate_sample("y", p, a, p);
  REQUIRE(s.dice_max.has_value());
  CHECK(*s.dice_match <= *s.dice_max);
  CHECK(s.per_rater.size() == 4);
  const std::vector<SampleMetrics> all{s, s};
  const auto r = aggregate("m", 4, all);
  CHECK(r.sample_count == 2);
  CHECK(r.ged == doctest::Approx(s.ged));
  double mean = 0;
  for (double v : r.per_rater) mean += v;
  CHECK(r.dice_mean == mean / 4);
  const std::vector<SampleMetrics> mixed{s, few};
  CHECK_THROWS(aggregate("m", 4, mixed));
  EvalReport bad = r;
  bad.dice_match = *bad.dice_max + 0.1;
  CHECK_THROWS_AS(bad.check_invariants(), std::logic_error);
}

TEST_CASE("brute-force oracle suite") {
  const auto o = suites::metric_oracles(300, 123);
  INFO(o.detail);
  CHECK(o.pass);
}

TEST_CASE("analytic invariant suite (reduced)") {
  const auto o = suites::analytic_invariants(300, 3, 1000000, 77);
  INFO(o.detail);
  CHECK(o.pass);
}
