#include "dpersona/losses.hpp"

#include <algorithm>
#include <stdexcept>

#include "dpersona/ops.hpp"

namespace dpersona::losses {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void LossWeights::validate() const {
  require(alpha >= 0 && beta >= 0 && l2 >= 0, "loss weights must be nonnegative");
}

template <typename T>
T dice_loss(std::span<const T> pred, std::span<const T> target, T eps) {
  require(pred.size() == target.size(), "dice_loss shape mismatch");
  T inter{}, sum_p{}, sum_t{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * target[i];
    sum_p += pred[i];
    sum_t += target[i];
  }
  return T{1} - (T{2} * inter + eps) / (sum_p + sum_t + eps);
}

template <typename T>
void dice_loss_backward(std::span<const T> pred, std::span<const T> target, T eps, T upstream, std::span<T> grad) {
  require(pred.size() == target.size() && grad.size() == pred.size(), "dice_loss_backward shape mismatch");
  T inter{}, sum_p{}, sum_t{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * target[i];
    sum_p += pred[i];
    sum_t += target[i];
  }
  const T num = T{2} * inter + eps;
  const T den = sum_p + sum_t + eps;
  const T inv_den2 = T{1} / (den * den);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    grad[i] += upstream * (num - T{2} * target[i] * den) * inv_den2;
  }
}

BoundTargets bound_targets(std::span<const BinaryMask> annotations) {
  require(!annotations.empty(), "bound_targets needs at least one annotation");
  BoundTargets b{annotations[0], annotations[0]};
  for (std::size_t r = 1; r < annotations.size(); ++r) {
    require(annotations[r].same_shape(b.intersection), "annotation shape mismatch");
    for (std::size_t i = 0; i < b.intersection.size(); ++i) {
      const bool fg = annotations[r].data[i] != 0;
      b.intersection.data[i] = (b.intersection.data[i] != 0 && fg) ? 1 : 0;
      b.unions.data[i] = (b.unions.data[i] != 0 || fg) ? 1 : 0;
    }
  }
  for (auto& v : b.intersection.data) v = v != 0;
  for (auto& v : b.unions.data) v = v != 0;
  return b;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> bound_predictions(std::span<const std::vector<T>> preds) {
  require(preds.size() >= 2, "bound_predictions needs K >= 2 maps");
  std::vector<T> lo = preds[0], hi = preds[0];
  for (std::size_t k = 1; k < preds.size(); ++k) {
    require(preds[k].size() == lo.size(), "bound_predictions shape mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i) {
      lo[i] = std::min(lo[i], preds[k][i]);
      hi[i] = std::max(hi[i], preds[k][i]);
    }
  }
  return {std::move(lo), std::move(hi)};
}

template <typename T>
std::vector<T> mask_values(const BinaryMask& m) {
  std::vector<T> v(m.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.data[i] ? T{1} : T{0};
  return v;
}

template <typename T>
T loss_bound(std::span<const T> soft_inter, std::span<const T> soft_union, const BoundTargets& targets, T eps) {
  const auto inter = mask_values<T>(targets.intersection);
  const auto uni = mask_values<T>(targets.unions);
  return dice_loss<T>(soft_inter, inter, eps) + dice_loss<T>(soft_union, uni, eps);
}

double loss_stage1(double kl, double seg_rand, double bound, const LossWeights& w) {
  return kl + w.alpha * seg_rand + w.beta * bound;
}

template <typename T>
T loss_stage2(std::span<const std::vector<T>> preds, std::span<const BinaryMask> annotations, T eps) {
  require(preds.size() == annotations.size(), "loss_stage2 needs one prediction per rater");
  T total{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto target = mask_values<T>(annotations[i]);
    total += dice_loss<T>(preds[i], target, eps);
  }
  return total;
}

template <typename T>
nn::Var dice_loss(nn::Tape<T>& tape, nn::Var pred, std::span<const T> target, T eps) {
  const auto& p = tape.value(pred);
  require(p.size() == target.size(), "dice_loss shape mismatch");
  const T value = dice_loss<T>(p.span(), target, eps);
  std::vector<T> tgt(target.begin(), target.end());
  return tape.record(Tensor<T>({1}, value), {pred}, [pred, eps, tgt = std::move(tgt)](nn::Tape<T>& t, const Tensor<T>& g) {
    dice_loss_backward<T>(t.value(pred).span(), tgt, eps, g[0], t.grad(pred).span());
  });
}

template <typename T>
nn::Var loss_bound(nn::Tape<T>& tape, std::span<const nn::Var> preds, const BoundTargets& targets, T eps) {
  require(preds.size() >= 2, "loss_bound needs K >= 2 predictions");
  const nn::Var lo = nn::elementwise_min(tape, preds);
  const nn::Var hi = nn::elementwise_max(tape, preds);
  const auto inter = mask_values<T>(targets.intersection);
  const auto uni = mask_values<T>(targets.unions);
  const nn::Var a = dice_loss<T>(tape, lo, inter, eps);
  const nn::Var b = dice_loss<T>(tape, hi, uni, eps);
  const std::vector<nn::Var> terms{a, b};
  const std::vector<T> ones{T{1}, T{1}};
  return nn::weighted_sum<T>(tape, terms, ones);
}

template <typename T>
nn::Var loss_stage1(nn::Tape<T>& tape, nn::Var kl, nn::Var seg_rand, nn::Var bound, const LossWeights& w) {
  const std::vector<nn::Var> terms{kl, seg_rand, bound};
  const std::vector<T> weights{T{1}, static_cast<T>(w.alpha), static_cast<T>(w.beta)};
  return nn::weighted_sum<T>(tape, terms, weights);
}

template <typename T>
nn::Var loss_stage2(nn::Tape<T>& tape, std::span<const nn::Var> preds, std::span<const BinaryMask> annotations, T eps) {
  require(!preds.empty() && preds.size() == annotations.size(), "loss_stage2 needs one prediction per rater");
  std::vector<nn::Var> terms;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    terms.push_back(dice_loss<T>(tape, preds[i], mask_values<T>(annotations[i]), eps));
  }
  const std::vector<T> ones(terms.size(), T{1});
  return nn::weighted_sum<T>(tape, terms, ones);
}

#define DPERSONA_INSTANTIATE_LOSSES(T)                                                                          \
  template T dice_loss<T>(std::span<const T>, std::span<const T>, T);                                           \
  template void dice_loss_backward<T>(std::span<const T>, std::span<const T>, T, T, std::span<T>);              \
  template std::pair<std::vector<T>, std::vector<T>> bound_predictions<T>(std::span<const std::vector<T>>);     \
  template T loss_bound<T>(std::span<const T>, std::span<const T>, const BoundTargets&, T);                     \
  template T loss_stage2<T>(std::span<const std::vector<T>>, std::span<const BinaryMask>, T);                   \
  template std::vector<T> mask_values<T>(const BinaryMask&);                                                    \
  template nn::Var dice_loss<T>(nn::Tape<T>&, nn::Var, std::span<const T>, T);                                  \
  template nn::Var loss_bound<T>(nn::Tape<T>&, std::span<const nn::Var>, const BoundTargets&, T);               \
  template nn::Var loss_stage1<T>(nn::Tape<T>&, nn::Var, nn::Var, nn::Var, const LossWeights&);                 \
  template nn::Var loss_stage2<T>(nn::Tape<T>&, std::span<const nn::Var>, std::span<const BinaryMask>, T);

DPERSONA_INSTANTIATE_LOSSES(float)
DPERSONA_INSTANTIATE_LOSSES(double)

}  // namespace dpersona::losses
