#pragma once

#include <cstdint>
#include <string>

// Property suites shared by the unit tests (small instance counts) and the
// acceptance binary (full counts).
namespace suites {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// ged, dice_soft, dice_matrix, dice_max exactly equal to brute-force oracles;
/// dice_match equal to exhaustive assignment enumeration.
Outcome metric_oracles(int instances, std::uint64_t seed);

/// ged(S,S) = 0, dice_match <= dice_max, KL >= 0 and KL vs Monte Carlo.
Outcome analytic_invariants(int property_instances, int kl_pairs, std::size_t mc_samples, std::uint64_t seed);

/// Finite-difference checks of every differentiable building block on 8x8 instances.
Outcome gradients(std::uint64_t seed);

/// Cross-attention outputs recovered as convex combinations of bank columns.
Outcome convexity(int pairs, std::uint64_t seed);

/// Planted-parameter STAPLE recovery and monotone monitored likelihood.
Outcome staple_recovery(int trials, std::uint64_t seed);

}  // namespace suites
