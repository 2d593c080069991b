#include "dpersona/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpersona::fusion {
namespace {

void require_consistent(std::span<const BinaryMask> annotations) {
  if (annotations.empty()) throw std::invalid_argument("fusion needs at least one annotation");
  for (const auto& a : annotations) {
    if (!a.same_shape(annotations[0])) throw std::invalid_argument("annotation shape mismatch");
  }
}

}  // namespace

BinaryMask majority_vote(std::span<const BinaryMask> annotations) {
  require_consistent(annotations);
  const std::size_t r = annotations.size();
  BinaryMask out(annotations[0].height, annotations[0].width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t votes = 0;
    for (const auto& a : annotations) votes += a.data[i] != 0;
    out.data[i] = 2 * votes >= r ? 1 : 0;
  }
  return out;
}

int random_rater(int raters, Rng& rng) {
  if (raters < 1) throw std::invalid_argument("random selection needs at least one rater");
  return uniform_index(rng, raters);
}

BinaryMask random_select(std::span<const BinaryMask> annotations, Rng& rng) {
  require_consistent(annotations);
  return annotations[random_rater(static_cast<int>(annotations.size()), rng)];
}

StapleEstimate staple(std::span<const BinaryMask> annotations, const StapleOptions& options) {
  require_consistent(annotations);
  if (annotations.size() < 2) throw std::invalid_argument("STAPLE needs at least two raters");
  const std::size_t r = annotations.size();
  const std::size_t n = annotations[0].size();
  const int h = annotations[0].height, w = annotations[0].width;

  StapleEstimate est;
  est.weights = Plane<double>(h, w);
  est.sensitivity.assign(r, options.initial_sensitivity);
  est.specificity.assign(r, options.initial_specificity);

  std::size_t votes = 0;
  for (const auto& a : annotations) votes += foreground_count(a);
  est.prior = static_cast<double>(votes) / static_cast<double>(r * n);
  if (votes == 0 || votes == r * n) {
    est.consensus = majority_vote(annotations);
    for (std::size_t i = 0; i < n; ++i) est.weights.data[i] = est.consensus.data[i];
    est.converged = false;
    return est;
  }

  const double lo = options.clamp, hi = 1.0 - options.clamp;
  auto clamp = [&](double v) { return std::clamp(v, lo, hi); };
  const double f = clamp(est.prior);
  std::vector<double> previous(n, -1.0);

  for (int it = 0; it < options.max_iterations; ++it) {
    // E-step in log space.
    std::vector<double> log_p(r), log_1mp(r), log_q(r), log_1mq(r);
    for (std::size_t j = 0; j < r; ++j) {
      const double p = clamp(est.sensitivity[j]), q = clamp(est.specificity[j]);
      log_p[j] = std::log(p);
      log_1mp[j] = std::log1p(-p);
      log_q[j] = std::log(q);
      log_1mq[j] = std::log1p(-q);
    }
    double ll = 0.0;
    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double a = std::log(f), b = std::log1p(-f);
      for (std::size_t j = 0; j < r; ++j) {
        const bool d = annotations[j].data[i] != 0;
        a += d ? log_p[j] : log_1mp[j];
        b += d ? log_1mq[j] : log_q[j];
      }
      const double m = std::max(a, b);
      const double log_norm = m + std::log(std::exp(a - m) + std::exp(b - m));
      const double wgt = std::exp(a - log_norm);
      ll += log_norm;
      max_change = std::max(max_change, std::abs(wgt - previous[i]));
      est.weights.data[i] = wgt;
      previous[i] = wgt;
    }
    est.log_likelihood.push_back(ll);

    // M-step.
    double sum_w = 0.0, sum_1mw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_w += est.weights.data[i];
      sum_1mw += 1.0 - est.weights.data[i];
    }
    for (std::size_t j = 0; j < r; ++j) {
      double tp = 0.0, tn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool d = annotations[j].data[i] != 0;
        if (d) tp += est.weights.data[i];
        else tn += 1.0 - est.weights.data[i];
      }
      est.sensitivity[j] = clamp(sum_w > 0 ? tp / sum_w : options.initial_sensitivity);
      est.specificity[j] = clamp(sum_1mw > 0 ? tn / sum_1mw : options.initial_specificity);
    }
    est.iterations = it + 1;
    if (max_change < options.tolerance) {
      est.converged = true;
      break;
    }
  }

  est.consensus = BinaryMask(h, w);
  for (std::size_t i = 0; i < n; ++i) est.consensus.data[i] = est.weights.data[i] > 0.5 ? 1 : 0;
  return est;
}

}  // namespace dpersona::fusion
