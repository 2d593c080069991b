#include "dpersona/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dpersona::metrics {
namespace {

struct Overlap {
  std::size_t inter = 0;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
};

Overlap overlap(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask shape mismatch");
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    o.inter += x && y;
    o.size_a += x;
    o.size_b += y;
  }
  return o;
}

std::vector<BinaryMask> binarize_all(std::span<const ProbabilityMap> maps) {
  std::vector<BinaryMask> out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.push_back(binarize(m, kBinarizeThreshold));
  return out;
}

}  // namespace

double iou(const BinaryMask& a, const BinaryMask& b) {
  const auto o = overlap(a, b);
  const std::size_t uni = o.size_a + o.size_b - o.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  const auto o = overlap(a, b);
  const std::size_t total = o.size_a + o.size_b;
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(total);
}

double ged(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns) {
  if (preds.empty() || anns.empty()) throw std::invalid_argument("ged needs nonempty prediction and annotation sets");
  const double m = static_cast<double>(preds.size());
  const double n = static_cast<double>(anns.size());
  double cross = 0.0;
  for (const auto& p : preds)
    for (const auto& a : anns) cross += 1.0 - iou(p, a);
  double within_p = 0.0;
  for (const auto& p : preds)
    for (const auto& q : preds) within_p += 1.0 - iou(p, q);
  double within_a = 0.0;
  for (const auto& a : anns)
    for (const auto& b : anns) within_a += 1.0 - iou(a, b);
  return 2.0 * cross / (m * n) - within_p / (m * m) - within_a / (n * n);
}

double dice_soft(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns,
                 std::span<const double> thresholds) {
  if (preds.empty() || anns.empty()) throw std::invalid_argument("dice_soft needs nonempty sets");
  if (thresholds.empty()) throw std::invalid_argument("dice_soft needs at least one threshold");
  const int h = anns[0].height, w = anns[0].width;
  const std::size_t n = anns[0].size();
  std::vector<double> p_soft(n, 0.0), a_soft(n, 0.0);
  for (const auto& p : preds) {
    if (p.height != h || p.width != w) throw std::invalid_argument("prediction shape mismatch");
    for (std::size_t i = 0; i < n; ++i) p_soft[i] += p.data[i];
  }
  for (const auto& a : anns) {
    if (!a.same_shape(anns[0])) throw std::invalid_argument("annotation shape mismatch");
    for (std::size_t i = 0; i < n; ++i) a_soft[i] += a.data[i] ? 1.0 : 0.0;
  }
  for (auto& v : p_soft) v /= static_cast<double>(preds.size());
  for (auto& v : a_soft) v /= static_cast<double>(anns.size());
  double total = 0.0;
  for (double tau : thresholds) {
    BinaryMask pb(h, w), ab(h, w);
    for (std::size_t i = 0; i < n; ++i) {
      pb.data[i] = p_soft[i] > tau;
      ab.data[i] = a_soft[i] > tau;
    }
    total += dice(pb, ab);
  }
  return total / static_cast<double>(thresholds.size());
}

DiceMatrix dice_matrix(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns) {
  DiceMatrix m(static_cast<int>(preds.size()), static_cast<int>(anns.size()));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m.at(i, j) = dice(preds[i], anns[j]);
  return m;
}

DiceMatrix dice_matrix(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns) {
  const auto bin = binarize_all(preds);
  return dice_matrix(std::span<const BinaryMask>(bin), anns);
}

double dice_max(const DiceMatrix& m) {
  if (m.rows < 1 || m.cols < 1) throw std::invalid_argument("dice_max needs a nonempty matrix");
  double total = 0.0;
  for (int j = 0; j < m.cols; ++j) {
    double best = m.at(0, j);
    for (int i = 1; i < m.rows; ++i) best = std::max(best, m.at(i, j));
    total += best;
  }
  return total / m.cols;
}

// Hungarian algorithm (potentials + augmenting paths) on the cols x rows cost
// matrix -M^T, which has no more rows than columns.
std::vector<int> max_weight_assignment(const DiceMatrix& m) {
  const int n = m.cols;  // agents: annotations
  const int k = m.rows;  // tasks: predictions
  if (n < 1) throw std::invalid_argument("assignment needs at least one annotation");
  if (k < n) throw std::invalid_argument("dice_match needs at least as many predictions as annotations");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(k + 1, 0.0);
  std::vector<int> p(k + 1, 0), way(k + 1, 0);
  auto cost = [&](int agent, int task) { return -m.at(task - 1, agent - 1); };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(k + 1, inf);
    std::vector<char> used(k + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= k; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= k; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double dice_match(const DiceMatrix& m) {
  const auto assignment = max_weight_assignment(m);
  double total = 0.0;
  for (int j = 0; j < m.cols; ++j) total += m.at(assignment[j], j);
  return total / m.cols;
}

PerRaterDice per_rater_dice(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns) {
  if (preds.size() != anns.size() || preds.empty()) {
    throw std::invalid_argument("per_rater_dice needs one prediction per annotation");
  }
  PerRaterDice out;
  for (std::size_t i = 0; i < preds.size(); ++i) out.per_rater.push_back(dice(binarize(preds[i], kBinarizeThreshold), anns[i]));
  out.mean = std::accumulate(out.per_rater.begin(), out.per_rater.end(), 0.0) / static_cast<double>(out.per_rater.size());
  return out;
}

void EvalReport::check_invariants() const {
  if (dice_max.has_value() != dice_match.has_value()) throw std::logic_error("Dice_max/Dice_match presence mismatch");
  if (dice_max && *dice_match > *dice_max + 1e-12) {
    throw std::logic_error("Dice_match exceeds Dice_max for method " + method);
  }
  if (!per_rater.empty()) {
    const double mean = std::accumulate(per_rater.begin(), per_rater.end(), 0.0) / static_cast<double>(per_rater.size());
    if (std::abs(mean - dice_mean) > 1e-12) throw std::logic_error("Dice_mean is not the mean of per-rater Dice");
  }
}

SampleMetrics evaluate_sample(std::string sample_id, std::span<const ProbabilityMap> preds,
                              std::span<const BinaryMask> anns, std::span<const ProbabilityMap> personalized) {
  SampleMetrics s;
  s.sample_id = std::move(sample_id);
  const auto bin = binarize_all(preds);
  s.ged = ged(bin, anns);
  s.dice_soft = dice_soft(preds, anns);
  if (preds.size() >= anns.size()) {
    const auto m = dice_matrix(std::span<const BinaryMask>(bin), anns);
    s.dice_max = dice_max(m);
    s.dice_match = dice_match(m);
    if (*s.dice_match > *s.dice_max + 1e-12) throw std::logic_error("Dice_match exceeds Dice_max");
  }
  if (!personalized.empty()) s.per_rater = per_rater_dice(personalized, anns).per_rater;
  return s;
}

EvalReport aggregate(std::string method, int sampling_number, std::span<const SampleMetrics> samples) {
  if (samples.empty()) throw std::invalid_argument("cannot aggregate zero samples");
  EvalReport r;
  r.method = std::move(method);
  r.sampling_number = sampling_number;
  r.sample_count = samples.size();
  const double n = static_cast<double>(samples.size());
  const bool has_bounds = samples[0].dice_max.has_value();
  const std::size_t raters = samples[0].per_rater.size();
  double dmax = 0.0, dmatch = 0.0;
  r.per_rater.assign(raters, 0.0);
  for (const auto& s : samples) {
    r.ged += s.ged;
    r.dice_soft += s.dice_soft;
    if (s.dice_max.has_value() != has_bounds || s.per_rater.size() != raters) {
      throw std::invalid_argument("inconsistent per-sample metric sets");
    }
    if (has_bounds) {
      dmax += *s.dice_max;
      dmatch += *s.dice_match;
    }
    for (std::size_t i = 0; i < raters; ++i) r.per_rater[i] += s.per_rater[i];
  }
  r.ged /= n;
  r.dice_soft /= n;
  if (has_bounds) {
    r.dice_max = dmax / n;
    r.dice_match = dmatch / n;
  }
  for (auto& v : r.per_rater) v /= n;
  if (raters > 0) r.dice_mean = std::accumulate(r.per_rater.begin(), r.per_rater.end(), 0.0) / static_cast<double>(raters);
  r.check_invariants();
  return r;
}

}  // namespace dpersona::metrics
