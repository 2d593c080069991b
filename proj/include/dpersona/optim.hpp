#pragma once

#include <vector>

#include "dpersona/tape.hpp"

namespace dpersona::nn {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// L2 penalty coefficient, applied as weight_decay * w added to the gradient.
  double weight_decay = 0.0;
};

/// Adam over a fixed parameter list. Frozen parameters are never touched.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamOptions options);

  /// Scales accumulated gradients by `grad_scale`, updates, then zeroes them.
  void step(T grad_scale = T{1});
  void zero_grad();
  long steps() const { return steps_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamOptions options_;
  long steps_ = 0;
};

}  // namespace dpersona::nn
