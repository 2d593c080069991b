#pragma once

#include <span>
#include <vector>

#include "dpersona/tape.hpp"

// Differentiable array ops recorded on a Tape. Feature maps are [C,H,W].
namespace dpersona::nn {

/// Stride-1 convolution with zero "same" padding. weight [O,C,k,k] (k odd), bias [O].
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias);

template <typename T>
Var leaky_relu(Tape<T>& tape, Var x, T slope);

template <typename T>
Var sigmoid(Tape<T>& tape, Var x);

template <typename T>
Var exp(Tape<T>& tape, Var x);

/// 2x2 average pooling; H and W must be even.
template <typename T>
Var avg_pool2(Tape<T>& tape, Var x);

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var upsample2(Tape<T>& tape, Var x);

/// Concatenation along the leading (channel) axis.
template <typename T>
Var concat(Tape<T>& tape, Var a, Var b);

/// [C,H,W] -> [C], spatial mean per channel.
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);

/// y = W x + b with x [n], W [m,n], b [m].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias);

/// Contiguous flat range [begin, end) as a rank-1 array.
template <typename T>
Var slice(Tape<T>& tape, Var x, int begin, int end);

template <typename T>
Var reshape(Tape<T>& tape, Var x, std::vector<int> shape);

/// sum_i weights[i] * xs[i]; all inputs share one shape.
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> xs, std::span<const T> weights);

/// Pixelwise minimum / maximum over equally shaped inputs. The gradient is
/// routed to the first input attaining the extremum.
template <typename T>
Var elementwise_min(Tape<T>& tape, std::span<const Var> xs);

template <typename T>
Var elementwise_max(Tape<T>& tape, std::span<const Var> xs);

}  // namespace dpersona::nn
