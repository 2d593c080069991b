#pragma once

#include <span>
#include <vector>

#include "dpersona/tape.hpp"
#include "dpersona/tensor.hpp"

// Training objectives: soft Dice, annotation bounds, Stage-I composite and
// the personalized per-rater loss. Each has a plain value form and a tape op.
namespace dpersona::losses {

inline constexpr double kDiceEps = 1e-6;

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.5;
  double l2 = 1e-5;

  void validate() const;
};

/// Pixelwise AND / OR of the raters' masks.
struct BoundTargets {
  BinaryMask intersection;
  BinaryMask unions;
};

/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps)
template <typename T>
T dice_loss(std::span<const T> pred, std::span<const T> target, T eps = T(kDiceEps));

/// d dice_loss / d pred, scaled by `upstream` and added into `grad`.
template <typename T>
void dice_loss_backward(std::span<const T> pred, std::span<const T> target, T eps, T upstream, std::span<T> grad);

BoundTargets bound_targets(std::span<const BinaryMask> annotations);

/// Soft intersection (pixelwise min) and soft union (pixelwise max) of K >= 2 maps.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> bound_predictions(std::span<const std::vector<T>> preds);

template <typename T>
T loss_bound(std::span<const T> soft_inter, std::span<const T> soft_union, const BoundTargets& targets,
             T eps = T(kDiceEps));

/// kl + alpha * seg_rand + beta * bound
double loss_stage1(double kl, double seg_rand, double bound, const LossWeights& w);

/// sum_i dice_loss(preds[i], annotations[i])
template <typename T>
T loss_stage2(std::span<const std::vector<T>> preds, std::span<const BinaryMask> annotations, T eps = T(kDiceEps));

template <typename T>
std::vector<T> mask_values(const BinaryMask& m);

// Tape ops ------------------------------------------------------------------

template <typename T>
nn::Var dice_loss(nn::Tape<T>& tape, nn::Var pred, std::span<const T> target, T eps = T(kDiceEps));

/// DSC(min_k preds, A_inter) + DSC(max_k preds, A_union)
template <typename T>
nn::Var loss_bound(nn::Tape<T>& tape, std::span<const nn::Var> preds, const BoundTargets& targets,
                   T eps = T(kDiceEps));

template <typename T>
nn::Var loss_stage1(nn::Tape<T>& tape, nn::Var kl, nn::Var seg_rand, nn::Var bound, const LossWeights& w);

template <typename T>
nn::Var loss_stage2(nn::Tape<T>& tape, std::span<const nn::Var> preds, std::span<const BinaryMask> annotations,
                    T eps = T(kDiceEps));

}  // namespace dpersona::losses
