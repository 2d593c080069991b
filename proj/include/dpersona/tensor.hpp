#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpersona {

inline std::size_t element_count(const std::vector<int>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string shape_string(const std::vector<int>& shape);

/// Dense row-major array. Networks use [C,H,W] layouts; vectors are rank 1.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T{})
      : shape(std::move(dims)), data(element_count(shape), fill) {}
  Tensor(std::vector<int> dims, std::vector<T> values) : shape(std::move(dims)), data(std::move(values)) {
    if (data.size() != element_count(shape)) {
      throw std::invalid_argument("tensor data size does not match shape " + shape_string(shape));
    }
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(std::size_t i) const { return shape.at(i); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

/// A single H x W plane: images, probability maps and binary masks.
template <typename T>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}
  Plane(int h, int w, std::vector<T> values) : height(h), width(w), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(h) * w) throw std::invalid_argument("plane size mismatch");
  }

  std::size_t size() const { return data.size(); }
  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Plane& o) const { return height == o.height && width == o.width; }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }

  bool operator==(const Plane&) const = default;
};

using BinaryMask = Plane<std::uint8_t>;
using Image = Plane<float>;
using ProbabilityMap = Plane<float>;

inline BinaryMask binarize(const ProbabilityMap& p, float threshold = 0.5f) {
  BinaryMask m(p.height, p.width);
  for (std::size_t i = 0; i < p.size(); ++i) m.data[i] = p.data[i] > threshold ? 1 : 0;
  return m;
}

inline std::size_t foreground_count(const BinaryMask& m) {
  std::size_t n = 0;
  for (auto v : m.data) n += v != 0;
  return n;
}

}  // namespace dpersona
