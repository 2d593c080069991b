#pragma once

#include <span>
#include <vector>

#include "dpersona/random.hpp"
#include "dpersona/tensor.hpp"

// Crowdsourcing label fusion: majority voting, random selection and binary STAPLE.
namespace dpersona::fusion {

/// Foreground iff at least half of the raters vote foreground (ties -> foreground).
BinaryMask majority_vote(std::span<const BinaryMask> annotations);

/// Index of a uniformly chosen rater.
int random_rater(int raters, Rng& rng);
BinaryMask random_select(std::span<const BinaryMask> annotations, Rng& rng);

struct StapleOptions {
  int max_iterations = 50;
  double tolerance = 1e-6;
  double initial_sensitivity = 0.99999;
  double initial_specificity = 0.99999;
  double clamp = 1e-6;
};

struct StapleEstimate {
  Plane<double> weights;          // posterior foreground probability per pixel
  BinaryMask consensus;           // weights > 0.5
  std::vector<double> sensitivity;  // p_j
  std::vector<double> specificity;  // q_j
  double prior = 0.0;             // spatially uniform foreground prior
  int iterations = 0;
  bool converged = false;
  /// Observed-data log-likelihood at the parameters entering each E-step.
  std::vector<double> log_likelihood;
};

/// Binary STAPLE expectation-maximisation with a global prior equal to the
/// mean vote rate. All-empty or all-full input falls back to majority voting
/// with converged = false.
StapleEstimate staple(std::span<const BinaryMask> annotations, const StapleOptions& options = {});

}  // namespace dpersona::fusion
