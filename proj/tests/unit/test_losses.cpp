#include <cmath>

#include "doctest.h"
#include "dpersona/dataset.hpp"
#include "dpersona/losses.hpp"
#include "oracles.hpp"

using namespace dpersona;
using namespace dpersona::losses;

namespace {

std::vector<double> as_double(const BinaryMask& m) { return mask_values<double>(m); }

}  // namespace

TEST_CASE("dice_loss reference values") {
  const std::vector<double> t{1, 0, 1, 1, 0, 0};
  CHECK(dice_loss<double>(t, t) <= 1e-6);
  const std::vector<double> disjoint{0, 1, 0, 0, 1, 1};
  CHECK(dice_loss<double>(disjoint, t) == doctest::Approx(1.0).epsilon(1e-6));
  const int n = 100;
  std::vector<double> half(n, 0.5), target(n, 0.0);
  for (int i = 0; i < n / 2; ++i) target[i] = 1.0;
  CHECK(dice_loss<double>(half, target) == doctest::Approx(0.5).epsilon(1e-7));
  const std::vector<double> empty(4, 0.0);
  CHECK(dice_loss<double>(empty, empty) == doctest::Approx(0.0));
}

TEST_CASE("bound targets") {
  const std::vector<BinaryMask> two{BinaryMask(1, 2, {1, 0}), BinaryMask(1, 2, {1, 1})};
  const auto b = bound_targets(two);
  CHECK(b.intersection.data == std::vector<std::uint8_t>{1, 0});
  CHECK(b.unions.data == std::vector<std::uint8_t>{1, 1});
  const std::vector<BinaryMask> same(3, BinaryMask(1, 3, {0, 1, 1}));
  CHECK(bound_targets(same).intersection == same[0]);
  CHECK(bound_targets(same).unions == same[0]);
  Rng rng(2);
  std::vector<BinaryMask> r;
  for (int i = 0; i < 4; ++i) r.push_back(oracle::random_mask(rng, 9, 9, 0.5));
  const auto rb = bound_targets(r);
  for (std::size_t i = 0; i < rb.intersection.size(); ++i) CHECK(rb.intersection.data[i] <= rb.unions.data[i]);
}

TEST_CASE("bound predictions") {
  const std::vector<std::vector<double>> same(3, {0.1, 0.7});
  const auto [lo, hi] = bound_predictions<double>(same);
  CHECK(lo == same[0]);
  CHECK(hi == same[0]);
  const std::vector<std::vector<double>> pair{{0.2}, {0.9}};
  const auto [l2, h2] = bound_predictions<double>(pair);
  CHECK(l2[0] == 0.2);
  CHECK(h2[0] == 0.9);
  // Binary maps reduce to Boolean AND/OR.
  Rng rng(12);
  std::vector<BinaryMask> masks;
  std::vector<std::vector<double>> maps;
  for (int k = 0; k < 5; ++k) {
    masks.push_back(oracle::random_mask(rng, 6, 6, 0.6));
    maps.push_back(as_double(masks.back()));
  }
  const auto [bl, bh] = bound_predictions<double>(maps);
  const auto t = bound_targets(masks);
  CHECK(bl == as_double(t.intersection));
  CHECK(bh == as_double(t.unions));
  CHECK(loss_bound<double>(bl, bh, t) == dice_loss<double>(bl, as_double(t.intersection)) + dice_loss<double>(bh, as_double(t.unions)));
}

TEST_CASE("loss_bound values") {
  const BoundTargets t{BinaryMask(1, 4, {1, 0, 0, 0}), BinaryMask(1, 4, {1, 1, 1, 0})};
  const auto inter = as_double(t.intersection), uni = as_double(t.unions);
  CHECK(loss_bound<double>(inter, uni, t) <= 2e-6);
  CHECK(loss_bound<double>(uni, inter, t) > 0.1);
  Rng rng(7);
  std::vector<double> a(16), b(16);
  for (auto& v : a) v = uniform(rng, 0, 1);
  for (auto& v : b) v = uniform(rng, 0, 1);
  std::vector<BinaryMask> anns{oracle::random_mask(rng, 4, 4, 0.3), oracle::random_mask(rng, 4, 4, 0.7)};
  const auto rt = bound_targets(anns);
  CHECK(loss_bound<double>(a, b, rt) == dice_loss<double>(a, as_double(rt.intersection)) + dice_loss<double>(b, as_double(rt.unions)));
}

TEST_CASE("loss_stage1 arithmetic and linearity") {
  CHECK(loss_stage1(0.3, 0.7, 0.9, LossWeights{0.0, 0.0, 0.0}) == 0.3);
  CHECK(loss_stage1(0.2, 0.4, 0.6, LossWeights{1.0, 0.5, 0.0}) == doctest::Approx(0.9).epsilon(1e-15));
  nn::Tape<double> tape;
  const auto kl = tape.variable(Tensor<double>({1}, 0.2));
  const auto seg = tape.variable(Tensor<double>({1}, 0.4));
  const auto bound = tape.variable(Tensor<double>({1}, 0.6));
  const LossWeights w{0.7, 0.25, 0.0};
  const auto total = loss_stage1<double>(tape, kl, seg, bound, w);
  CHECK(tape.value(total)[0] == doctest::Approx(loss_stage1(0.2, 0.4, 0.6, w)));
  tape.backward(total);
  CHECK(tape.grad(kl)[0] == 1.0);
  CHECK(tape.grad(seg)[0] == 0.7);
  CHECK(tape.grad(bound)[0] == 0.25);
}

TEST_CASE("loss_stage2") {
  const auto s = synthgen::generate_sample(7, "train-0003", 32, 32, synthgen::default_profiles(4));
  std::vector<std::vector<double>> exact;
  for (const auto& a : s.annotations) exact.push_back(as_double(a));
  CHECK(loss_stage2<double>(exact, s.annotations) <= 4e-6);
  auto swapped = exact;
  std::swap(swapped[0], swapped[3]);
  CHECK(s.annotations[0] != s.annotations[3]);
  CHECK(loss_stage2<double>(swapped, s.annotations) > loss_stage2<double>(exact, s.annotations));
  const std::vector<std::vector<double>> one{exact[1]};
  const std::vector<BinaryMask> ann{s.annotations[2]};
  CHECK(loss_stage2<double>(one, ann) == dice_loss<double>(exact[1], as_double(s.annotations[2])));
  CHECK_THROWS(loss_stage2<double>(one, s.annotations));
}

TEST_CASE("losses stay in range and tape values equal plain values") {
  Rng rng(31);
  for (int it = 0; it < 50; ++it) {
    std::vector<BinaryMask> anns;
    for (int r = 0; r < 3; ++r) anns.push_back(oracle::random_mask(rng, 8, 8, uniform(rng, 0, 1)));
    std::vector<std::vector<double>> preds(3, std::vector<double>(64));
    for (auto& p : preds)
      for (auto& v : p) v = uniform(rng, 1e-3, 1 - 1e-3);
    const double d = dice_loss<double>(preds[0], as_double(anns[0]));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    const double s2 = loss_stage2<double>(preds, anns);
    CHECK(s2 >= 0.0);
    CHECK(s2 <= 3.0);
    const auto [lo, hi] = bound_predictions<double>(preds);
    const auto bt = bound_targets(anns);
    const double lb = loss_bound<double>(lo, hi, bt);
    CHECK(lb >= 0.0);
    CHECK(lb <= 2.0);

    nn::Tape<double> tape;
    std::vector<nn::Var> vs;
    for (const auto& p : preds) vs.push_back(tape.variable(Tensor<double>({1, 8, 8}, p)));
    CHECK(tape.value(loss_stage2<double>(tape, vs, anns))[0] == doctest::Approx(s2).epsilon(1e-14));
    const auto lbv = loss_bound<double>(tape, vs, bt);
    CHECK(tape.value(lbv)[0] == doctest::Approx(lb).epsilon(1e-14));
    tape.backward(lbv);
    for (auto v : vs)
      for (double g : tape.grad(v).data) CHECK(std::isfinite(g));
  }
}
