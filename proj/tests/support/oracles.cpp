#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

namespace {

struct Counts {
  long inter = 0, a = 0, b = 0;
};

Counts count(const BinaryMask& x, const BinaryMask& y) {
  Counts c;
  for (int r = 0; r < x.height; ++r) {
    for (int col = 0; col < x.width; ++col) {
      const bool p = x.at(r, col) != 0;
      const bool q = y.at(r, col) != 0;
      if (p && q) ++c.inter;
      if (p) ++c.a;
      if (q) ++c.b;
    }
  }
  return c;
}

}  // namespace

double iou(const BinaryMask& a, const BinaryMask& b) {
  const auto c = count(a, b);
  const long uni = c.a + c.b - c.inter;
  return uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  const auto c = count(a, b);
  return c.a + c.b == 0 ? 1.0 : 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.a + c.b);
}

double ged(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns) {
  double cross = 0.0, pp = 0.0, aa = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < anns.size(); ++j) cross += 1.0 - iou(preds[i], anns[j]);
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < preds.size(); ++j) pp += 1.0 - iou(preds[i], preds[j]);
  for (std::size_t i = 0; i < anns.size(); ++i)
    for (std::size_t j = 0; j < anns.size(); ++j) aa += 1.0 - iou(anns[i], anns[j]);
  const double m = static_cast<double>(preds.size()), n = static_cast<double>(anns.size());
  return 2.0 * cross / (m * n) - pp / (m * m) - aa / (n * n);
}

double dice_soft(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns,
                 std::span<const double> thresholds) {
  const int h = anns[0].height, w = anns[0].width;
  std::vector<double> ps(static_cast<std::size_t>(h) * w, 0.0), as(ps.size(), 0.0);
  for (const auto& p : preds)
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i] += p.data[i];
  for (const auto& a : anns)
    for (std::size_t i = 0; i < as.size(); ++i) as[i] += a.data[i] ? 1.0 : 0.0;
  for (auto& v : ps) v /= static_cast<double>(preds.size());
  for (auto& v : as) v /= static_cast<double>(anns.size());
  double total = 0.0;
  for (double t : thresholds) {
    BinaryMask x(h, w), y(h, w);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      x.data[i] = ps[i] > t ? 1 : 0;
      y.data[i] = as[i] > t ? 1 : 0;
    }
    total += dice(x, y);
  }
  return total / static_cast<double>(thresholds.size());
}

Matrix dice_matrix(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns) {
  Matrix m(preds.size(), std::vector<double>(anns.size()));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < anns.size(); ++j) m[i][j] = dice(preds[i], anns[j]);
  return m;
}

double dice_max(const Matrix& m) {
  const std::size_t n = m[0].size();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double best = -1.0;
    for (const auto& row : m) best = std::max(best, row[j]);
    total += best;
  }
  return total / static_cast<double>(n);
}

double dice_match_exhaustive(const Matrix& m) {
  const std::size_t rows = m.size(), n = m[0].size();
  std::vector<int> chosen(n, -1);
  std::vector<char> used(rows, 0);
  double best = -1.0;
  std::function<void(std::size_t)> rec = [&](std::size_t j) {
    if (j == n) {
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) total += m[chosen[k]][k];
      best = std::max(best, total / static_cast<double>(n));
      return;
    }
    for (std::size_t i = 0; i < rows; ++i) {
      if (used[i]) continue;
      used[i] = 1;
      chosen[j] = static_cast<int>(i);
      rec(j + 1);
      used[i] = 0;
    }
  };
  rec(0);
  return best;
}

double monte_carlo_kl(const dpersona::latent::DiagonalGaussian<double>& p,
                      const dpersona::latent::DiagonalGaussian<double>& q, std::size_t samples, dpersona::Rng& rng) {
  const std::size_t d = p.mean.size();
  std::vector<double> sp(d), sq(d);
  double log_norm = 0.0;  // sum log(sigma_q / sigma_p)
  for (std::size_t k = 0; k < d; ++k) {
    sp[k] = std::exp(p.log_sigma[k]);
    sq[k] = std::exp(q.log_sigma[k]);
    log_norm += std::log(sq[k]) - std::log(sp[k]);
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double acc = log_norm;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = p.mean[k] + sp[k] * normal(rng);
      const double u = (x - p.mean[k]) / sp[k];
      const double v = (x - q.mean[k]) / sq[k];
      acc += 0.5 * (v * v - u * u);
    }
    total += acc;
  }
  return total / static_cast<double>(samples);
}

BinaryMask random_mask(dpersona::Rng& rng, int h, int w, double density) {
  std::bernoulli_distribution b(density);
  BinaryMask m(h, w);
  for (auto& v : m.data) v = b(rng) ? 1 : 0;
  return m;
}

ProbabilityMap random_probabilities(dpersona::Rng& rng, int h, int w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ProbabilityMap p(h, w);
  for (auto& v : p.data) v = u(rng);
  return p;
}

}  // namespace oracle
