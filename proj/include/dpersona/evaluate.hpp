#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpersona/dataset.hpp"
#include "dpersona/metrics.hpp"
#include "dpersona/model.hpp"
#include "json.hpp"

// Method-level evaluation on a split and the EvalReport file formats.
namespace dpersona::eval {

enum class MethodKind { diverse, personalized, single_label };

struct Method {
  std::string name;  // stage1, stage2, prob-unet, mv, rs, staple, single-rater:<i>
  MethodKind kind = MethodKind::diverse;
  int rater = 0;     // 1-based, single-rater only

  /// File-system friendly form ("single-rater:2" -> "single-rater-2").
  std::string slug() const;
};

/// Throws std::invalid_argument for unknown names or a rater outside 1..raters.
Method parse_method(const std::string& name, int raters);

struct MethodRun {
  std::vector<metrics::SampleMetrics> samples;
  metrics::EvalReport report;
};

/// n prior samples per image; per-image sampling seeds derive from (seed, sample_id).
MethodRun evaluate_diverse(const std::string& method, const model::ModelBundle<float>& bundle, const data::Split& split,
                           int n_samples, std::uint64_t seed);

/// R personalized maps per image with a fixed_per_image bank of size M.
MethodRun evaluate_personalized(const std::string& method, const model::ModelBundle<float>& bundle,
                                const data::Split& split, int M, std::uint64_t seed, bool attention_scale = false);

/// One prediction per image, scored against every rater.
MethodRun evaluate_single(const std::string& method, const model::ModelBundle<float>& bundle, const data::Split& split);

nlohmann::json to_json(const metrics::EvalReport& r);
metrics::EvalReport report_from_json(const nlohmann::json& j);
std::string samples_csv(const std::vector<metrics::SampleMetrics>& samples, int raters);

}  // namespace dpersona::eval
