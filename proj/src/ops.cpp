#include "dpersona/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace dpersona::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// cols[(c*k + ky)*k + kx, y*W + x] = x[c, y+ky-pad, x+kx-pad]
template <typename T>
void im2col(const T* in, int channels, int h, int w, int k, std::vector<T>& cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  cols.assign(static_cast<std::size_t>(channels) * k * k * hw, T{});
  for (int c = 0; c < channels; ++c) {
    const T* plane = in + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          T* dst = row + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) dst[x] = src[x + dx];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int channels, int h, int w, int k, T* out) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* plane = out + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          const T* src = row + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
        }
      }
    }
  }
}

template <typename T>
Var elementwise_extremum(Tape<T>& tape, std::span<const Var> xs, bool take_min) {
  require(!xs.empty(), "elementwise extremum needs at least one input");
  const auto& first = tape.value(xs[0]);
  Tensor<T> out = first;
  std::vector<int> arg(first.size(), 0);
  for (std::size_t j = 1; j < xs.size(); ++j) {
    const auto& v = tape.value(xs[j]);
    require(v.shape == first.shape, "elementwise extremum shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (take_min ? v[i] < out[i] : v[i] > out[i]) {
        out[i] = v[i];
        arg[i] = static_cast<int>(j);
      }
    }
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return tape.record(std::move(out), inputs, [inputs, arg = std::move(arg)](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t i = 0; i < arg.size(); ++i) {
      Var src = inputs[arg[i]];
      if (t.requires_grad(src)) t.grad(src)[i] += g[i];
    }
  });
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  require(xv.rank() == 3 && wv.rank() == 4, "conv2d expects x [C,H,W] and weight [O,C,k,k]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int o = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == c, "conv2d channel mismatch");
  require(wv.dim(3) == k && k % 2 == 1, "conv2d kernel must be square and odd");
  require(tape.value(bias).size() == static_cast<std::size_t>(o), "conv2d bias size mismatch");
  const int hw = h * w;
  const int ckk = c * k * k;

  std::vector<T> cols;
  if (k > 1) im2col(xv.data.data(), c, h, w, k, cols);
  const T* col_ptr = k > 1 ? cols.data() : xv.data.data();

  Tensor<T> out({o, h, w});
  MatMap<T> out_m(out.data.data(), o, hw);
  ConstMatMap<T> w_m(wv.data.data(), o, ckk);
  ConstMatMap<T> col_m(col_ptr, ckk, hw);
  out_m.noalias() = w_m * col_m;
  const auto& bv = tape.value(bias);
  for (int r = 0; r < o; ++r) out_m.row(r).array() += bv[r];

  return tape.record(std::move(out), {x, weight, bias},
                     [x, weight, bias, c, h, w, o, k, hw, ckk, cols = std::move(cols)](Tape<T>& t, const Tensor<T>& g) {
                       ConstMatMap<T> g_m(g.data.data(), o, hw);
                       const T* col_ptr = k > 1 ? cols.data() : t.value(x).data.data();
                       ConstMatMap<T> col_m(col_ptr, ckk, hw);
                       if (t.requires_grad(weight)) {
                         MatMap<T> gw(t.grad(weight).data.data(), o, ckk);
                         gw.noalias() += g_m * col_m.transpose();
                       }
                       if (t.requires_grad(bias)) {
                         auto& gb = t.grad(bias);
                         for (int r = 0; r < o; ++r) {
                           const T* row = g.data.data() + static_cast<std::size_t>(r) * hw;
                           T s{};
                           for (int i = 0; i < hw; ++i) s += row[i];
                           gb[r] += s;
                         }
                       }
                       if (t.requires_grad(x)) {
                         ConstMatMap<T> w_m(t.value(weight).data.data(), o, ckk);
                         auto& gx = t.grad(x);
                         if (k == 1) {
                           MatMap<T> gx_m(gx.data.data(), ckk, hw);
                           gx_m.noalias() += w_m.transpose() * g_m;
                         } else {
                           RowMat<T> dcols(ckk, hw);
                           dcols.noalias() = w_m.transpose() * g_m;
                           col2im_add(dcols.data(), c, h, w, k, gx.data.data());
                         }
                       }
                     });
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var x, T slope) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v = v > 0 ? v : slope * v;
  return tape.record(std::move(out), {x}, [x, slope](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0 ? g[i] : slope * g[i];
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v = T{1} / (T{1} + std::exp(-v));
  Tensor<T> saved = tape.requires_grad(x) ? out : Tensor<T>{};
  return tape.record(std::move(out), {x}, [x, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i] * (T{1} - saved[i]);
  });
}

template <typename T>
Var exp(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v = std::exp(v);
  Tensor<T> saved = tape.requires_grad(x) ? out : Tensor<T>{};
  return tape.record(std::move(out), {x}, [x, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i];
  });
}

template <typename T>
Var avg_pool2(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  require(xv.rank() == 3, "avg_pool2 expects [C,H,W]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial size");
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = xv.data.data() + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const T* p = src + static_cast<std::size_t>(2 * y) * w + 2 * xx;
        dst[y * ow + xx] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  }
  return tape.record(std::move(out), {x}, [x, c, h, w, oh, ow](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (int ch = 0; ch < c; ++ch) {
      T* dst = gx.data.data() + static_cast<std::size_t>(ch) * h * w;
      const T* src = g.data.data() + static_cast<std::size_t>(ch) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const T v = T(0.25) * src[y * ow + xx];
          T* p = dst + static_cast<std::size_t>(2 * y) * w + 2 * xx;
          p[0] += v;
          p[1] += v;
          p[w] += v;
          p[w + 1] += v;
        }
    }
  });
}

template <typename T>
Var upsample2(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  require(xv.rank() == 3, "upsample2 expects [C,H,W]");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int oh = 2 * h, ow = 2 * w;
  Tensor<T> out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch) {
    const T* src = xv.data.data() + static_cast<std::size_t>(ch) * h * w;
    T* dst = out.data.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
  }
  return tape.record(std::move(out), {x}, [x, c, h, w, oh, ow](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (int ch = 0; ch < c; ++ch) {
      T* dst = gx.data.data() + static_cast<std::size_t>(ch) * h * w;
      const T* src = g.data.data() + static_cast<std::size_t>(ch) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
    }
  });
}

template <typename T>
Var concat(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.rank() == bv.rank() && av.rank() >= 1, "concat rank mismatch");
  for (int i = 1; i < av.rank(); ++i) require(av.dim(i) == bv.dim(i), "concat trailing shape mismatch");
  std::vector<int> shape = av.shape;
  shape[0] += bv.dim(0);
  Tensor<T> out(shape);
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
  const std::size_t na = av.size();
  return tape.record(std::move(out), {a, b}, [a, b, na](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    }
  });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  require(xv.rank() == 3, "global_avg_pool expects [C,H,W]");
  const int c = xv.dim(0);
  const std::size_t hw = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor<T> out({c});
  for (int ch = 0; ch < c; ++ch) {
    T s{};
    for (std::size_t i = 0; i < hw; ++i) s += xv[ch * hw + i];
    out[ch] = s / static_cast<T>(hw);
  }
  return tape.record(std::move(out), {x}, [x, c, hw](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (int ch = 0; ch < c; ++ch) {
      const T v = g[ch] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += v;
    }
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  require(wv.rank() == 2, "linear weight must be [m,n]");
  const int m = wv.dim(0), n = wv.dim(1);
  require(xv.size() == static_cast<std::size_t>(n), "linear input size mismatch");
  require(tape.value(bias).size() == static_cast<std::size_t>(m), "linear bias size mismatch");
  Tensor<T> out({m});
  for (int i = 0; i < m; ++i) {
    T s = tape.value(bias)[i];
    for (int j = 0; j < n; ++j) s += wv[static_cast<std::size_t>(i) * n + j] * xv[j];
    out[i] = s;
  }
  return tape.record(std::move(out), {x, weight, bias}, [x, weight, bias, m, n](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(weight)) {
      const auto& xv = t.value(x);
      auto& gw = t.grad(weight);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gw[static_cast<std::size_t>(i) * n + j] += g[i] * xv[j];
    }
    if (t.requires_grad(bias)) {
      auto& gb = t.grad(bias);
      for (int i = 0; i < m; ++i) gb[i] += g[i];
    }
    if (t.requires_grad(x)) {
      const auto& wv = t.value(weight);
      auto& gx = t.grad(x);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[j] += g[i] * wv[static_cast<std::size_t>(i) * n + j];
    }
  });
}

template <typename T>
Var slice(Tape<T>& tape, Var x, int begin, int end) {
  const auto& xv = tape.value(x);
  require(0 <= begin && begin <= end && static_cast<std::size_t>(end) <= xv.size(), "slice out of range");
  Tensor<T> out({end - begin});
  std::copy(xv.data.begin() + begin, xv.data.begin() + end, out.data.begin());
  return tape.record(std::move(out), {x}, [x, begin](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin + i] += g[i];
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, std::vector<int> shape) {
  Tensor<T> out = tape.value(x);
  require(element_count(shape) == out.size(), "reshape size mismatch");
  out.shape = std::move(shape);
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> xs, std::span<const T> weights) {
  require(!xs.empty() && xs.size() == weights.size(), "weighted_sum needs one weight per input");
  const auto& first = tape.value(xs[0]);
  Tensor<T> out(first.shape);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    const auto& v = tape.value(xs[j]);
    require(v.shape == first.shape, "weighted_sum shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += weights[j] * v[i];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  std::vector<T> w(weights.begin(), weights.end());
  return tape.record(std::move(out), inputs, [inputs, w = std::move(w)](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      if (!t.requires_grad(inputs[j])) continue;
      auto& gx = t.grad(inputs[j]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += w[j] * g[i];
    }
  });
}

template <typename T>
Var elementwise_min(Tape<T>& tape, std::span<const Var> xs) {
  return elementwise_extremum(tape, xs, true);
}

template <typename T>
Var elementwise_max(Tape<T>& tape, std::span<const Var> xs) {
  return elementwise_extremum(tape, xs, false);
}

#define DPERSONA_INSTANTIATE_OPS(T)                                                    \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var);                                     \
  template Var leaky_relu<T>(Tape<T>&, Var, T);                                        \
  template Var sigmoid<T>(Tape<T>&, Var);                                              \
  template Var exp<T>(Tape<T>&, Var);                                                  \
  template Var avg_pool2<T>(Tape<T>&, Var);                                            \
  template Var upsample2<T>(Tape<T>&, Var);                                            \
  template Var concat<T>(Tape<T>&, Var, Var);                                          \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                      \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                     \
  template Var slice<T>(Tape<T>&, Var, int, int);                                      \
  template Var reshape<T>(Tape<T>&, Var, std::vector<int>);                            \
  template Var weighted_sum<T>(Tape<T>&, std::span<const Var>, std::span<const T>);    \
  template Var elementwise_min<T>(Tape<T>&, std::span<const Var>);                     \
  template Var elementwise_max<T>(Tape<T>&, std::span<const Var>);

DPERSONA_INSTANTIATE_OPS(float)
DPERSONA_INSTANTIATE_OPS(double)

}  // namespace dpersona::nn
