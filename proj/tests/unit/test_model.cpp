#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "dpersona/model.hpp"
#include "dpersona/optim.hpp"
#include "dpersona/losses.hpp"
#include "dpersona/stage2.hpp"

using namespace dpersona;
using namespace dpersona::model;

namespace {

Image random_image(Rng& rng, int h, int w) { return Image(h, w, standard_normal<float>(rng, static_cast<std::size_t>(h) * w)); }

}  // namespace

TEST_CASE("shape contracts for H, W in {32, 64, 128}") {
  const auto bundle = ModelBundle<float>::create(ArchitectureConfig{}, 1);
  Rng rng(2);
  for (int s : {32, 64, 128}) {
    nn::Tape<float> tape;
    const auto x = tape.constant(image_tensor<float>(random_image(rng, s, s)));
    const auto f = backbone_forward(tape, bundle, x);
    CHECK(tape.value(f).shape == std::vector<int>{16, s, s});
    const auto prior = encode_prior(tape, bundle, x);
    CHECK(tape.value(prior.mean).shape == std::vector<int>{6});
    const auto z = tape.constant(Tensor<float>({6}, standard_normal<float>(rng, 6)));
    CHECK(tape.value(head_logits(tape, bundle, z, f)).shape == std::vector<int>{1, s, s});
    CHECK(tape.value(projection_forward(tape, bundle, 3, f)).shape == std::vector<int>{6, s, s});
    CHECK(tape.value(stage2::expert_prompt(tape, bundle, 0, f)).shape == std::vector<int>{6});
  }
}

TEST_CASE("forward passes are pure and produce probabilities") {
  const auto bundle = ModelBundle<float>::create(ArchitectureConfig{}, 4);
  Rng rng(3);
  const auto img = random_image(rng, 32, 32);
  latent::LatentCode<float> z{standard_normal<float>(rng, 6)};
  const auto a = forward_diverse(bundle, img, z);
  const auto b = forward_diverse(bundle, img, z);
  CHECK(a == b);
  for (float v : a.data) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  const auto c = ModelBundle<float>::create(ArchitectureConfig{}, 4);
  CHECK(c.checksums() == bundle.checksums());
}

TEST_CASE("encoders at initialisation") {
  const auto bundle = ModelBundle<double>::create(ArchitectureConfig{}, 6);
  Rng rng(7);
  const auto img = random_image(rng, 32, 32);
  std::vector<BinaryMask> anns(4, BinaryMask(32, 32));
  for (auto& m : anns)
    for (auto& v : m.data) v = uniform(rng, 0, 1) < 0.3;
  const auto prior = encode_prior(bundle, img);
  const auto post = encode_posterior(bundle, img, anns);
  for (const auto& g : {prior, post}) {
    for (double v : g.mean) CHECK(std::isfinite(v));
    for (double s : g.sigma()) CHECK(s > 0.0);
    // log-sigma rows start at zero.
    for (double s : g.sigma()) CHECK(s == 1.0);
  }
  const Image zero(32, 32, 0.0f);
  const std::vector<BinaryMask> empty(4, BinaryMask(32, 32));
  for (const auto& g : {encode_prior(bundle, zero), encode_posterior(bundle, zero, empty)}) {
    for (double v : g.mean) CHECK(v == 0.0);
    for (double s : g.sigma()) CHECK(s == 1.0);
  }
  auto permuted = anns;
  std::rotate(permuted.begin(), permuted.begin() + 1, permuted.end());
  CHECK(encode_posterior(bundle, img, permuted).mean != post.mean);
  CHECK_THROWS(encode_posterior(bundle, img, std::span<const BinaryMask>(anns).first(3)));
}

TEST_CASE("freeze contract") {
  auto bundle = ModelBundle<float>::create(ArchitectureConfig{}, 8);
  CHECK_NOTHROW(bundle.assert_frozen());
  Rng rng(9);
  const auto img = image_tensor<float>(random_image(rng, 32, 32));
  auto step = [&](nn::Adam<float>& opt) {
    nn::Tape<float> tape;
    const auto f = backbone_forward(tape, bundle, tape.constant(img));
    std::vector<nn::Var> terms;
    for (int r = 0; r < bundle.arch.raters; ++r) {
      const auto z = stage2::expert_prompt(tape, bundle, r, f);
      const auto p = head_probabilities(tape, bundle, z, f);
      std::vector<float> target(32 * 32, 0.0f);
      for (int i = 0; i < 200; ++i) target[i] = 1.0f;
      terms.push_back(losses::dice_loss<float>(tape, p, target));
    }
    const std::vector<float> ones(terms.size(), 1.0f);
    tape.backward(nn::weighted_sum<float>(tape, terms, ones));
    opt.step();
  };
  auto all_params = [&] {
    std::vector<nn::Parameter<float>*> out;
    for (auto* c : bundle.components())
      for (auto& p : c->parameters()) out.push_back(&p);
    return out;
  };

  SUBCASE("frozen shared components survive ten steps") {
    const auto before = bundle.checksums();
    bundle.freeze(kSharedComponents);
    nn::Adam<float> opt(all_params(), {1e-2});
    for (int i = 0; i < 10; ++i) step(opt);
    CHECK(opt.steps() == 10);
    const auto after = bundle.checksums();
    for (const auto& n : kSharedComponents) CHECK(after.at(n) == before.at(n));
    for (int r = 0; r < bundle.arch.raters; ++r) CHECK(after.at(projection_name(r)) != before.at(projection_name(r)));
    CHECK_NOTHROW(bundle.assert_frozen());
    bundle.backbone.parameters()[0].value[0] += 1.0f;
    CHECK_THROWS_WITH_AS(bundle.assert_frozen(), doctest::Contains("backbone"), std::runtime_error);
  }
  SUBCASE("unfrozen components change after one step") {
    const auto before = bundle.checksums();
    nn::Adam<float> opt(all_params(), {1e-2});
    step(opt);
    const auto after = bundle.checksums();
    // The prior and posterior encoders take no part in this loss.
    for (const auto& n : {"backbone", "head", "projection_0"}) CHECK(after.at(n) != before.at(n));
    CHECK(after.at("prior") == before.at("prior"));
  }
}

TEST_CASE("projection head size follows the architecture") {
  const ArchitectureConfig arch;
  const auto b = ModelBundle<float>::create(arch, 1);
  const std::size_t c = arch.feature_channels, p = arch.projection_width, d = arch.latent_dim;
  CHECK(b.projections[0].parameter_count() == c * p * 9 + p + p * d * 9 + d);
  CHECK(b.projections.size() == 4);
}
