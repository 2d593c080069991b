#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dpersona/latent.hpp"
#include "dpersona/ops.hpp"
#include "dpersona/tape.hpp"

// The five trainable pieces of the pipeline: backbone F_b, prior and
// posterior encoders, prediction head, and one projection head per rater.
namespace dpersona::model {

struct ArchitectureConfig {
  int latent_dim = 6;
  int raters = 4;
  std::array<int, 3> backbone_widths{16, 32, 64};
  int feature_channels = 16;
  std::array<int, 3> encoder_widths{16, 32, 64};
  int head_width = 16;
  int projection_width = 16;
  double leaky_slope = 0.1;

  void validate() const;
  bool operator==(const ArchitectureConfig&) const = default;
};

inline const std::array<std::string, 4> kSharedComponents{"backbone", "prior", "posterior", "head"};
inline const std::array<std::string, 3> kStage2Frozen{"backbone", "prior", "head"};

std::string projection_name(int rater);

/// A named group of parameters with a freeze flag.
template <typename T>
class Component {
 public:
  Component() = default;
  explicit Component(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  std::vector<nn::Parameter<T>>& parameters() { return params_; }
  const std::vector<nn::Parameter<T>>& parameters() const { return params_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) {
    frozen_ = f;
    for (auto& p : params_) p.frozen = f;
  }

  std::size_t parameter_count() const;
  /// FNV-1a over parameter names and raw values.
  std::uint64_t checksum() const;
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Weights ~ N(0, gain / fan_in), zero bias; gain 0 gives an all-zero layer.
  void add_conv(const std::string& layer, int in, int out, int kernel, Rng& rng, double gain = 2.0);
  void add_linear(const std::string& layer, int in, int out, Rng& rng, double gain = 2.0);

  template <typename U>
  Component<U> cast() const {
    Component<U> c(name_);
    for (const auto& p : params_) c.parameters().emplace_back(p.name, p.value.template cast<U>());
    c.set_frozen(frozen_);
    return c;
  }

 private:
  std::string name_;
  std::vector<nn::Parameter<T>> params_;
  bool frozen_ = false;
};

template <typename T>
struct ModelBundle {
  ArchitectureConfig arch;
  Component<T> backbone;
  Component<T> prior;
  Component<T> posterior;
  Component<T> head;
  std::vector<Component<T>> projections;
  /// Checksums recorded by freeze(); compared by assert_frozen().
  std::map<std::string, std::uint64_t> frozen_checksums;

  /// Shared components are initialised from `seed`; projection heads from
  /// `projection_seed` so Stage-I weights do not depend on R heads existing.
  static ModelBundle create(const ArchitectureConfig& arch, std::uint64_t seed);
  void reset_projections(std::uint64_t projection_seed);

  std::vector<Component<T>*> components();
  std::vector<const Component<T>*> components() const;
  Component<T>& component(const std::string& name);
  const Component<T>& component(const std::string& name) const;

  void freeze(std::span<const std::string> names);
  void unfreeze_all();
  std::map<std::string, std::uint64_t> checksums() const;
  /// Recomputes checksums of frozen components; throws std::runtime_error
  /// naming the first component whose parameters drifted.
  std::map<std::string, std::uint64_t> assert_frozen() const;
  void zero_grad();

  template <typename U>
  ModelBundle<U> cast() const {
    ModelBundle<U> b;
    b.arch = arch;
    b.backbone = backbone.template cast<U>();
    b.prior = prior.template cast<U>();
    b.posterior = posterior.template cast<U>();
    b.head = head.template cast<U>();
    for (const auto& p : projections) b.projections.push_back(p.template cast<U>());
    b.frozen_checksums = frozen_checksums;
    return b;
  }
};

// Forward passes. `B` is ModelBundle<T> (parameters trainable unless frozen)
// or const ModelBundle<T> (parameters recorded as constants).

template <typename T>
struct GaussianVars {
  nn::Var mean;
  nn::Var log_sigma;
};

namespace detail {

template <typename T, typename Params>
class LayerCursor {
 public:
  LayerCursor(nn::Tape<T>& tape, Params& params, T slope) : tape_(tape), params_(params), slope_(slope) {}

  nn::Var conv(nn::Var x) {
    const nn::Var w = tape_.parameter(params_.at(next_));
    const nn::Var b = tape_.parameter(params_.at(next_ + 1));
    next_ += 2;
    return nn::conv2d(tape_, x, w, b);
  }
  nn::Var conv_act(nn::Var x) { return nn::leaky_relu(tape_, conv(x), slope_); }
  nn::Var linear(nn::Var x) {
    const nn::Var w = tape_.parameter(params_.at(next_));
    const nn::Var b = tape_.parameter(params_.at(next_ + 1));
    next_ += 2;
    return nn::linear(tape_, x, w, b);
  }

 private:
  nn::Tape<T>& tape_;
  Params& params_;
  T slope_;
  std::size_t next_ = 0;
};

template <typename T, typename C>
auto cursor(nn::Tape<T>& tape, C& component, double slope) {
  return LayerCursor<T, std::remove_reference_t<decltype(component.parameters())>>(tape, component.parameters(),
                                                                                  static_cast<T>(slope));
}

template <typename T, typename C>
GaussianVars<T> encoder_forward(nn::Tape<T>& tape, C& enc, nn::Var input, int latent_dim, double slope) {
  auto L = cursor(tape, enc, slope);
  nn::Var x = L.conv_act(input);
  x = nn::avg_pool2(tape, x);
  x = L.conv_act(x);
  x = nn::avg_pool2(tape, x);
  x = L.conv_act(x);
  x = nn::global_avg_pool(tape, x);
  const nn::Var out = L.linear(x);
  return {nn::slice(tape, out, 0, latent_dim), nn::slice(tape, out, latent_dim, 2 * latent_dim)};
}

}  // namespace detail

/// image [1,H,W] -> features [C,H,W]; H and W must be multiples of 4.
template <typename T, typename B>
nn::Var backbone_forward(nn::Tape<T>& tape, B& bundle, nn::Var image) {
  auto L = detail::cursor(tape, bundle.backbone, bundle.arch.leaky_slope);
  const nn::Var e1 = L.conv_act(L.conv_act(image));
  const nn::Var e2 = L.conv_act(L.conv_act(nn::avg_pool2(tape, e1)));
  nn::Var x = L.conv_act(L.conv_act(nn::avg_pool2(tape, e2)));
  x = nn::concat(tape, nn::upsample2(tape, x), e2);
  x = L.conv_act(L.conv_act(x));
  x = nn::concat(tape, nn::upsample2(tape, x), e1);
  return L.conv_act(L.conv_act(x));
}

template <typename T, typename B>
GaussianVars<T> encode_prior(nn::Tape<T>& tape, B& bundle, nn::Var image) {
  return detail::encoder_forward(tape, bundle.prior, image, bundle.arch.latent_dim, bundle.arch.leaky_slope);
}

/// image [1,H,W], annotations [R,H,W] concatenated along channels.
template <typename T, typename B>
GaussianVars<T> encode_posterior(nn::Tape<T>& tape, B& bundle, nn::Var image, nn::Var annotations) {
  if (tape.value(annotations).dim(0) != bundle.arch.raters) {
    throw std::invalid_argument("posterior expects exactly R annotation channels");
  }
  const nn::Var input = nn::concat(tape, image, annotations);
  return detail::encoder_forward(tape, bundle.posterior, input, bundle.arch.latent_dim, bundle.arch.leaky_slope);
}

/// logits [1,H,W] = F_head(broadcast(z), features)
template <typename T, typename B>
nn::Var head_logits(nn::Tape<T>& tape, B& bundle, nn::Var z, nn::Var features) {
  const auto& f = tape.value(features);
  if (tape.value(z).size() != static_cast<std::size_t>(bundle.arch.latent_dim)) {
    throw std::invalid_argument("latent dimension does not match the model");
  }
  const nn::Var tiled = latent::broadcast_latent(tape, z, f.dim(1), f.dim(2));
  auto L = detail::cursor(tape, bundle.head, bundle.arch.leaky_slope);
  nn::Var x = nn::concat(tape, tiled, features);
  x = L.conv_act(x);
  x = L.conv_act(x);
  return L.conv(x);
}

template <typename T, typename B>
nn::Var head_probabilities(nn::Tape<T>& tape, B& bundle, nn::Var z, nn::Var features) {
  return nn::sigmoid(tape, head_logits(tape, bundle, z, features));
}

/// features [C,H,W] -> map [D,H,W] for rater index `rater` (0-based).
template <typename T, typename B>
nn::Var projection_forward(nn::Tape<T>& tape, B& bundle, int rater, nn::Var features) {
  if (rater < 0 || rater >= static_cast<int>(bundle.projections.size())) {
    throw std::out_of_range("rater index outside the projection heads");
  }
  auto L = detail::cursor(tape, bundle.projections[rater], bundle.arch.leaky_slope);
  return L.conv(L.conv_act(features));
}

// Convenience wrappers for inference on plain arrays.

template <typename T>
Tensor<T> image_tensor(const Image& image);

template <typename T>
Tensor<T> annotation_tensor(std::span<const BinaryMask> annotations);

/// sigmoid(F_head(broadcast(z), F_b(image)))
template <typename T>
ProbabilityMap forward_diverse(const ModelBundle<T>& bundle, const Image& image, const latent::LatentCode<T>& z);

template <typename T>
latent::DiagonalGaussian<T> encode_prior(const ModelBundle<T>& bundle, const Image& image);

template <typename T>
latent::DiagonalGaussian<T> encode_posterior(const ModelBundle<T>& bundle, const Image& image,
                                             std::span<const BinaryMask> annotations);

}  // namespace dpersona::model
