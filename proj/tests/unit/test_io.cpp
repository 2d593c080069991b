#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "dpersona/checkpoint.hpp"
#include "dpersona/config.hpp"
#include "dpersona/evaluate.hpp"
#include "dpersona/npy.hpp"

using namespace dpersona;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("dpersona_test_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("npy round trip and header layout") {
  const auto f = temp_file("a.npy");
  const std::vector<float> v{1.5f, -2.0f, 3.25f, 0.0f, 7.0f, 8.0f};
  io::write_npy<float>(f, {2, 3}, v);
  const auto bytes = slurp(f);
  CHECK(bytes.substr(0, 6) == "\x93NUMPY");
  CHECK((bytes.size() - v.size() * 4) % 64 == 0);
  CHECK(bytes.find("'descr': '<f4'") != std::string::npos);
  CHECK(bytes.find("'shape': (2, 3)") != std::string::npos);
  const auto r = io::read_npy<float>(f);
  CHECK(r.shape == std::vector<std::int64_t>{2, 3});
  CHECK(r.data == v);
  CHECK_THROWS(io::read_npy<std::uint8_t>(f));

  const auto g = temp_file("b.npy");
  io::write_npy<std::uint8_t>(g, {5}, {0, 1, 1, 0, 1});
  CHECK(slurp(g).find("'shape': (5,)") != std::string::npos);
  CHECK(io::read_npy<std::uint8_t>(g).data == std::vector<std::uint8_t>{0, 1, 1, 0, 1});
  fs::remove(f);
  fs::remove(g);
}

TEST_CASE("checkpoint round trip and corruption detection") {
  io::Checkpoint c;
  c.bundle = model::ModelBundle<float>::create(model::ArchitectureConfig{}, 3);
  c.bundle.freeze(model::kSharedComponents);
  c.config_hash = "abc";
  c.upstream_hash = "def";
  c.meta = {{"stage", 2}};
  const auto f = temp_file("ckpt.bin");
  io::save_checkpoint(f, c);
  const auto r = io::load_checkpoint(f);
  CHECK(r.bundle.checksums() == c.bundle.checksums());
  CHECK(r.checksums == c.bundle.checksums());
  CHECK(r.bundle.arch == c.bundle.arch);
  CHECK(r.bundle.backbone.frozen());
  CHECK_FALSE(r.bundle.projections[0].frozen());
  CHECK(r.bundle.frozen_checksums == c.bundle.frozen_checksums);
  CHECK(r.config_hash == "abc");
  CHECK(r.upstream_hash == "def");
  CHECK(r.meta["stage"] == 2);

  auto bytes = slurp(f);
  bytes[bytes.size() - 3] ^= 0x40;
  std::ofstream(f, std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_WITH(io::load_checkpoint(f), doctest::Contains("checksum"));
  std::ofstream(f, std::ios::binary | std::ios::trunc) << "garbage";
  CHECK_THROWS(io::load_checkpoint(f));
  fs::remove(f);
  CHECK_THROWS_WITH(io::load_checkpoint(f), doctest::Contains("missing"));
}

TEST_CASE("config defaults, round trip and unknown keys") {
  const config::ExperimentConfig d;
  CHECK(d.synthgen.height == 64);
  CHECK(d.synthgen.raters == 4);
  CHECK(d.model.latent_dim == 6);
  CHECK(d.stage1.K == 10);
  CHECK(d.stage1.weights.beta == 0.5);
  CHECK(d.stage1.learning_rate == 1e-4);
  CHECK(d.stage2.M == 100);
  CHECK(d.metrics.sampling_numbers == std::vector<int>{10, 30, 50});
  const auto j = config::to_json(d);
  CHECK(config::to_json(config::from_json(j)) == j);
  CHECK(config::config_hash(config::from_json(j)) == config::config_hash(d));

  CHECK_THROWS_WITH(config::from_json(json{{"stage1", {{"bogus", 1}}}}), doctest::Contains("stage1.bogus"));
  CHECK_THROWS_WITH(config::from_json(json{{"nope", json::object()}}), doctest::Contains("nope"));
  CHECK_THROWS_WITH(config::from_json(json{{"model", {{"widthz", 3}}}}), doctest::Contains("widthz"));
  CHECK_THROWS(config::from_json(json{{"stage1", {{"epochs", "ten"}}}}));

  const auto r3 = config::from_json(json{{"synthgen", {{"raters", 3}}}});
  CHECK(r3.model.raters == 3);
  CHECK_NOTHROW(r3.validate());
  CHECK_THROWS_WITH(config::from_json(json{{"synthgen", {{"raters", 3}}}, {"model", {{"raters", 4}}}}),
                    doctest::Contains("model.raters"));
}

TEST_CASE("overrides and hashes") {
  json doc = {{"stage1", {{"epochs", 5}}}};
  config::apply_override(doc, "stage1.epochs=7");
  config::apply_override(doc, "stage2.bank_policy=fixed_per_image");
  config::apply_override(doc, "metrics.sampling_numbers=[5,6]");
  const auto c = config::from_json(doc);
  CHECK(c.stage1.epochs == 7);
  CHECK(c.stage2.bank_policy == stage2::BankPolicy::fixed_per_image);
  CHECK(c.metrics.sampling_numbers == std::vector<int>{5, 6});
  CHECK_THROWS(config::apply_override(doc, "novalue"));

  config::ExperimentConfig a, b;
  b.stage1.epochs = 3;
  CHECK(config::config_hash(a) != config::config_hash(b));
  CHECK(config::upstream_hash(a) == config::upstream_hash(b));
  b.model.latent_dim = 4;
  CHECK(config::upstream_hash(a) != config::upstream_hash(b));
  CHECK(config::config_hash(a).size() == 16);
}

TEST_CASE("method names and report JSON") {
  CHECK(eval::parse_method("stage1", 4).kind == eval::MethodKind::diverse);
  CHECK(eval::parse_method("prob-unet", 4).kind == eval::MethodKind::diverse);
  CHECK(eval::parse_method("stage2", 4).kind == eval::MethodKind::personalized);
  const auto s = eval::parse_method("single-rater:3", 4);
  CHECK(s.kind == eval::MethodKind::single_label);
  CHECK(s.rater == 3);
  CHECK(s.slug() == "single-rater-3");
  CHECK_THROWS(eval::parse_method("single-rater:5", 4));
  CHECK_THROWS(eval::parse_method("single-rater:0", 4));
  CHECK_THROWS(eval::parse_method("unet", 4));

  metrics::EvalReport r;
  r.method = "stage1";
  r.sampling_number = 10;
  r.sample_count = 3;
  r.ged = 0.25;
  r.dice_soft = 0.75;
  r.dice_max = 0.8;
  r.dice_match = 0.7;
  r.seed = 4;
  r.config_hash = "0011";
  const auto j = eval::to_json(r);
  CHECK(j["dice_mean"].is_null());
  const auto back = eval::report_from_json(j);
  CHECK(eval::to_json(back) == j);
}
