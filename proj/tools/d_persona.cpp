#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpersona/config.hpp"
#include "dpersona/pipeline.hpp"
#include "json.hpp"

namespace {

using namespace dpersona;
using nlohmann::json;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool force = false;
  std::optional<int> samples;
  std::string method;
  std::vector<std::string> overrides;
};

// Which config section --seed overrides for each command.
const char* seed_section(const std::string& command, const std::string& method) {
  if (command == "gen-data") return "synthgen";
  if (command == "train-stage1") return "stage1";
  if (command == "train-stage2") return "stage2";
  if (command == "baseline") return method == "prob-unet" ? "stage1" : "baselines";
  return "metrics";
}

config::ExperimentConfig build_config(const std::string& command, const Options& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::runtime_error("cannot open config " + o.config_path);
    doc = json::parse(in);
  }
  for (const auto& s : o.overrides) config::apply_override(doc, s);
  if (o.seed) doc[seed_section(command, o.method)]["seed"] = *o.seed;
  auto cfg = config::from_json(doc);
  cfg.validate();
  return cfg;
}

json paths_json(const std::vector<std::filesystem::path>& paths) {
  json a = json::array();
  for (const auto& p : paths) a.push_back(p.string());
  return a;
}

int run(const std::string& command, const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  pipeline::Context ctx{build_config(command, o), o.out, o.force, &std::cerr};
  std::vector<std::filesystem::path> artifacts;
  const bool needs_method = command == "eval" || command == "baseline";
  if (needs_method && o.method.empty()) throw std::invalid_argument(command + " requires --method");
  std::string label = command;
  if (command == "gen-data") {
    pipeline::gen_data(ctx);
    artifacts = {ctx.out / "data"};
  } else if (command == "train-stage1") {
    pipeline::train_stage1(ctx);
    artifacts = {ctx.out / "stage1" / "checkpoint.bin", ctx.out / "stage1" / "train_log.jsonl"};
  } else if (command == "train-stage2") {
    pipeline::train_stage2(ctx);
    artifacts = {ctx.out / "stage2" / "checkpoint.bin", ctx.out / "stage2" / "train_log.jsonl"};
  } else if (command == "baseline") {
    pipeline::baseline(ctx, o.method);
    artifacts = {ctx.out / "baselines"};
    label += " --method " + o.method;
  } else if (command == "eval") {
    artifacts = pipeline::evaluate(ctx, o.method, o.samples);
    label += " --method " + o.method;
    if (o.samples) label += " --samples " + std::to_string(*o.samples);
  } else {
    pipeline::report(ctx);
    artifacts = {ctx.out / "report"};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  pipeline::record_run(ctx, label, paths_json(artifacts), secs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D-Persona multi-rater segmentation on synthetic data"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "generate the synthetic multi-rater dataset"},
      {"train-stage1", "train the diversified (Stage I) model"},
      {"train-stage2", "train per-rater projection heads on a frozen Stage-I model"},
      {"eval", "evaluate a trained method on the test split"},
      {"baseline", "train a baseline (prob-unet, mv, rs, staple, single-rater:<i>)"},
      {"report", "render the results table and overlay images"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed for this command's config section");
    sub->add_option("--out", o.out, "workspace directory")->capture_default_str();
    sub->add_flag("--force", o.force, "overwrite existing outputs");
    sub->add_option("--set", o.overrides, "config override section.key=value (repeatable)");
    if (name == "eval") sub->add_option("--samples", o.samples, "sampling number for diverse methods")->check(CLI::PositiveNumber);
    if (name == "eval" || name == "baseline") sub->add_option("--method", o.method, "method name");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const std::exception& e) {
    std::cerr << "d-persona " << command << ": error: " << e.what() << "\n";
    return 1;
  }
}
