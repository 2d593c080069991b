#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpersona/tensor.hpp"

// Set-to-set and per-rater segmentation metrics.
namespace dpersona::metrics {

inline constexpr std::array<double, 5> kSoftDiceThresholds{0.1, 0.3, 0.5, 0.7, 0.9};
inline constexpr float kBinarizeThreshold = 0.5f;

/// Empty-vs-empty is defined as 1 for both.
double iou(const BinaryMask& a, const BinaryMask& b);
double dice(const BinaryMask& a, const BinaryMask& b);

/// Generalized energy distance with d = 1 - IoU; self-pairs are included.
double ged(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns);

/// Mean over thresholds of dice([mean(preds) > tau], [mean(anns) > tau]).
double dice_soft(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns,
                 std::span<const double> thresholds = kSoftDiceThresholds);

/// Rows index predictions, columns index annotations.
struct DiceMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  DiceMatrix() = default;
  DiceMatrix(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
};

/// values[i][j] = dice(binarize(preds[i]), anns[j])
DiceMatrix dice_matrix(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns);
DiceMatrix dice_matrix(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns);

/// Mean over annotations of the best prediction's Dice.
double dice_max(const DiceMatrix& m);

/// Mean Dice under the best injective annotation -> prediction assignment.
/// Requires rows >= cols.
double dice_match(const DiceMatrix& m);

/// Maximum-weight assignment of each column to a distinct row (rows >= cols).
/// Returns the chosen row for every column.
std::vector<int> max_weight_assignment(const DiceMatrix& m);

struct PerRaterDice {
  std::vector<double> per_rater;
  double mean = 0.0;
};

PerRaterDice per_rater_dice(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns);

/// Metrics for one evaluated image. Optional fields are absent when the
/// method does not produce them.
struct SampleMetrics {
  std::string sample_id;
  double ged = 0.0;
  double dice_soft = 0.0;
  std::optional<double> dice_max;
  std::optional<double> dice_match;
  std::vector<double> per_rater;
};

struct EvalReport {
  std::string method;
  int sampling_number = 0;
  std::size_t sample_count = 0;
  double ged = 0.0;
  double dice_soft = 0.0;
  std::optional<double> dice_max;
  std::optional<double> dice_match;
  std::vector<double> per_rater;
  double dice_mean = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;

  /// Dice_match <= Dice_max and Dice_mean = mean(per_rater); throws otherwise.
  void check_invariants() const;
};

/// Evaluates one image: diversity metrics over `preds` vs `anns`, the Dice
/// matrix bounds when preds.size() >= anns.size(), and per-rater Dice against
/// `personalized` (one map per rater, same order as anns).
SampleMetrics evaluate_sample(std::string sample_id, std::span<const ProbabilityMap> preds,
                              std::span<const BinaryMask> anns, std::span<const ProbabilityMap> personalized);

/// Averages per-sample metrics in input order.
EvalReport aggregate(std::string method, int sampling_number, std::span<const SampleMetrics> samples);

}  // namespace dpersona::metrics
