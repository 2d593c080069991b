#include "dpersona/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "dpersona/fpenv.hpp"
#include "dpersona/stage1.hpp"
#include "dpersona/stage2.hpp"

namespace dpersona::eval {

using nlohmann::json;

std::string Method::slug() const {
  std::string s = name;
  std::replace(s.begin(), s.end(), ':', '-');
  return s;
}

Method parse_method(const std::string& name, int raters) {
  if (name == "stage1" || name == "prob-unet") return {name, MethodKind::diverse, 0};
  if (name == "stage2") return {name, MethodKind::personalized, 0};
  if (name == "mv" || name == "rs" || name == "staple") return {name, MethodKind::single_label, 0};
  const std::string prefix = "single-rater:";
  if (name.rfind(prefix, 0) == 0) {
    int r = 0;
    try {
      std::size_t used = 0;
      r = std::stoi(name.substr(prefix.size()), &used);
      if (used != name.size() - prefix.size()) r = 0;
    } catch (const std::exception&) {
      r = 0;
    }
    if (r < 1 || r > raters) {
      throw std::invalid_argument("method '" + name + "': rater index must be in 1.." + std::to_string(raters));
    }
    return {name, MethodKind::single_label, r};
  }
  throw std::invalid_argument("unknown method '" + name + "'");
}

namespace {

MethodRun finish(const std::string& method, int sampling_number, std::uint64_t seed,
                 std::vector<metrics::SampleMetrics> samples) {
  MethodRun run;
  run.report = metrics::aggregate(method, sampling_number, samples);
  run.report.seed = seed;
  run.samples = std::move(samples);
  return run;
}

}  // namespace

MethodRun evaluate_diverse(const std::string& method, const model::ModelBundle<float>& bundle, const data::Split& split,
                           int n_samples, std::uint64_t seed) {
  ScopedFlushDenormals ftz;
  std::vector<metrics::SampleMetrics> samples;
  for (const auto& s : split.samples) {
    Rng rng(derive_seed(seed, s.sample_id));
    const auto preds = stage1::infer_diverse(bundle, s.image, n_samples, rng);
    samples.push_back(metrics::evaluate_sample(s.sample_id, preds, s.annotations, {}));
  }
  return finish(method, n_samples, seed, std::move(samples));
}

MethodRun evaluate_personalized(const std::string& method, const model::ModelBundle<float>& bundle,
                                const data::Split& split, int M, std::uint64_t seed, bool attention_scale) {
  ScopedFlushDenormals ftz;
  std::vector<metrics::SampleMetrics> samples;
  for (const auto& s : split.samples) {
    const auto preds = stage2::personalize_all(bundle, s.image, s.sample_id, M, seed, attention_scale);
    samples.push_back(metrics::evaluate_sample(s.sample_id, preds, s.annotations, preds));
  }
  return finish(method, static_cast<int>(bundle.projections.size()), seed, std::move(samples));
}

MethodRun evaluate_single(const std::string& method, const model::ModelBundle<float>& bundle, const data::Split& split) {
  ScopedFlushDenormals ftz;
  std::vector<metrics::SampleMetrics> samples;
  for (const auto& s : split.samples) {
    const std::vector<ProbabilityMap> pred{stage1::infer_single(bundle, s.image)};
    const std::vector<ProbabilityMap> per_rater(s.annotations.size(), pred[0]);
    samples.push_back(metrics::evaluate_sample(s.sample_id, pred, s.annotations, per_rater));
  }
  return finish(method, 1, 0, std::move(samples));
}

json to_json(const metrics::EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"method", r.method},
          {"sampling_number", r.sampling_number},
          {"sample_count", r.sample_count},
          {"ged", r.ged},
          {"dice_soft", r.dice_soft},
          {"dice_max", opt(r.dice_max)},
          {"dice_match", opt(r.dice_match)},
          {"per_rater_dice", r.per_rater},
          {"dice_mean", r.per_rater.empty() ? json(nullptr) : json(r.dice_mean)},
          {"seed", r.seed},
          {"config_hash", r.config_hash}};
}

metrics::EvalReport report_from_json(const json& j) {
  metrics::EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.sampling_number = j.at("sampling_number").get<int>();
  r.sample_count = j.at("sample_count").get<std::size_t>();
  r.ged = j.at("ged").get<double>();
  r.dice_soft = j.at("dice_soft").get<double>();
  if (!j.at("dice_max").is_null()) r.dice_max = j.at("dice_max").get<double>();
  if (!j.at("dice_match").is_null()) r.dice_match = j.at("dice_match").get<double>();
  r.per_rater = j.at("per_rater_dice").get<std::vector<double>>();
  if (!j.at("dice_mean").is_null()) r.dice_mean = j.at("dice_mean").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.check_invariants();
  return r;
}

std::string samples_csv(const std::vector<metrics::SampleMetrics>& samples, int raters) {
  std::ostringstream out;
  out.precision(17);
  out << "sample_id,ged,dice_soft,dice_max,dice_match";
  for (int r = 1; r <= raters; ++r) out << ",dice_A" << r;
  out << "\n";
  for (const auto& s : samples) {
    out << s.sample_id << "," << s.ged << "," << s.dice_soft << ",";
    if (s.dice_max) out << *s.dice_max;
    out << ",";
    if (s.dice_match) out << *s.dice_match;
    for (int r = 0; r < raters; ++r) {
      out << ",";
      if (r < static_cast<int>(s.per_rater.size())) out << s.per_rater[r];
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace dpersona::eval
