#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpersona/latent.hpp"
#include "dpersona/random.hpp"
#include "dpersona/tensor.hpp"

// Brute-force reference implementations used to validate the library.
namespace oracle {

using dpersona::BinaryMask;
using dpersona::ProbabilityMap;
using Matrix = std::vector<std::vector<double>>;  // [pred][ann]

double iou(const BinaryMask& a, const BinaryMask& b);
double dice(const BinaryMask& a, const BinaryMask& b);

double ged(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns);
double dice_soft(std::span<const ProbabilityMap> preds, std::span<const BinaryMask> anns,
                 std::span<const double> thresholds);
Matrix dice_matrix(std::span<const BinaryMask> preds, std::span<const BinaryMask> anns);
double dice_max(const Matrix& m);
/// Maximum over every injective annotation -> prediction map of the mean Dice.
double dice_match_exhaustive(const Matrix& m);

/// Monte-Carlo estimate of KL(p || q) = E_p[log p(x) - log q(x)].
double monte_carlo_kl(const dpersona::latent::DiagonalGaussian<double>& p,
                      const dpersona::latent::DiagonalGaussian<double>& q, std::size_t samples, dpersona::Rng& rng);

BinaryMask random_mask(dpersona::Rng& rng, int h, int w, double density);
ProbabilityMap random_probabilities(dpersona::Rng& rng, int h, int w);

}  // namespace oracle
