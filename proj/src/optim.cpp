#include "dpersona/optim.hpp"

#include <cmath>

namespace dpersona::nn {

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), T{});
    v_.emplace_back(p->value.size(), T{});
  }
}

template <typename T>
void Adam<T>::step(T grad_scale) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const T lr = static_cast<T>(options_.learning_rate / bc1);
  const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(options_.epsilon);
  const T wd = static_cast<T>(options_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto* p = params_[k];
    if (p->frozen) {
      p->zero_grad();
      continue;
    }
    auto& w = p->value.data;
    auto& g = p->grad.data;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] * grad_scale + wd * w[i];
      m[i] = b1 * m[i] + (T{1} - b1) * gi;
      v[i] = b2 * v[i] + (T{1} - b2) * gi * gi;
      w[i] -= lr * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      g[i] = T{};
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dpersona::nn
