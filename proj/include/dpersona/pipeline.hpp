#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dpersona/config.hpp"
#include "json.hpp"

// The CLI commands as library calls over a workspace directory:
//   <out>/data                      gen-data
//   <out>/stage1                    train-stage1
//   <out>/stage2                    train-stage2
//   <out>/baselines/<method>        baseline
//   <out>/eval/<method>_n<N>.json   eval (plus per-sample .csv)
//   <out>/report                    report
//   <out>/runs.jsonl                append-only run ledger
namespace dpersona::pipeline {

struct Context {
  config::ExperimentConfig config;
  std::filesystem::path out;
  bool force = false;
  std::ostream* progress = nullptr;  // per-epoch lines; may be null
};

void gen_data(const Context& ctx);
void train_stage1(const Context& ctx);
void train_stage2(const Context& ctx);
/// prob-unet, mv, rs, staple or single-rater:<i>.
void baseline(const Context& ctx, const std::string& method);
/// Without `samples`, diverse methods are evaluated at every configured
/// sampling number. Returns the written report paths.
std::vector<std::filesystem::path> evaluate(const Context& ctx, const std::string& method, std::optional<int> samples);
void report(const Context& ctx);

/// Appends one RunRecord line to <out>/runs.jsonl.
void record_run(const Context& ctx, const std::string& command, const nlohmann::json& artifacts, double wall_seconds);

std::string code_version();

}  // namespace dpersona::pipeline
