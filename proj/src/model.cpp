#include "dpersona/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dpersona/hashing.hpp"

namespace dpersona::model {

void ArchitectureConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("architecture: ") + what + " must be >= 1");
  };
  positive(latent_dim, "latent_dim");
  positive(raters, "raters");
  positive(feature_channels, "feature_channels");
  positive(head_width, "head_width");
  positive(projection_width, "projection_width");
  for (int w : backbone_widths) positive(w, "backbone width");
  for (int w : encoder_widths) positive(w, "encoder width");
  if (!(leaky_slope >= 0 && leaky_slope < 1)) throw std::invalid_argument("architecture: leaky_slope must be in [0,1)");
}

std::string projection_name(int rater) { return "projection_" + std::to_string(rater); }

template <typename T>
std::size_t Component<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::uint64_t Component<T>::checksum() const {
  Fnv1a64 h;
  h.update(name_);
  for (const auto& p : params_) {
    h.update(p.name);
    h.update_values(p.value.span());
  }
  return h.digest();
}

template <typename T>
void Component<T>::add_conv(const std::string& layer, int in, int out, int kernel, Rng& rng, double gain) {
  Tensor<T> w({out, in, kernel, kernel});
  if (gain > 0) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / (in * kernel * kernel)));
    for (auto& v : w.data) v = static_cast<T>(dist(rng));
  }
  params_.emplace_back(layer + ".weight", std::move(w));
  params_.emplace_back(layer + ".bias", Tensor<T>({out}));
}

template <typename T>
void Component<T>::add_linear(const std::string& layer, int in, int out, Rng& rng, double gain) {
  Tensor<T> w({out, in});
  if (gain > 0) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / in));
    for (auto& v : w.data) v = static_cast<T>(dist(rng));
  }
  params_.emplace_back(layer + ".weight", std::move(w));
  params_.emplace_back(layer + ".bias", Tensor<T>({out}));
}

namespace {

template <typename T>
Component<T> make_encoder(const std::string& name, int in_channels, const ArchitectureConfig& arch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, name));
  Component<T> c(name);
  const auto& w = arch.encoder_widths;
  c.add_conv("conv1", in_channels, w[0], 3, rng);
  c.add_conv("conv2", w[0], w[1], 3, rng);
  c.add_conv("conv3", w[1], w[2], 3, rng);
  c.add_linear("gaussian", w[2], 2 * arch.latent_dim, rng, 1.0);
  // log-sigma rows start at zero so every encoder initially outputs sigma = 1.
  auto& weight = c.parameters()[c.parameters().size() - 2].value;
  for (int r = arch.latent_dim; r < 2 * arch.latent_dim; ++r)
    for (int k = 0; k < w[2]; ++k) weight[static_cast<std::size_t>(r) * w[2] + k] = T{};
  return c;
}

}  // namespace

template <typename T>
ModelBundle<T> ModelBundle<T>::create(const ArchitectureConfig& arch, std::uint64_t seed) {
  arch.validate();
  ModelBundle b;
  b.arch = arch;
  const auto& bw = arch.backbone_widths;
  const int c = arch.feature_channels;
  {
    Rng rng(derive_seed(seed, "backbone"));
    b.backbone = Component<T>("backbone");
    auto& k = b.backbone;
    k.add_conv("enc1a", 1, bw[0], 3, rng);
    k.add_conv("enc1b", bw[0], bw[0], 3, rng);
    k.add_conv("enc2a", bw[0], bw[1], 3, rng);
    k.add_conv("enc2b", bw[1], bw[1], 3, rng);
    k.add_conv("bottom_a", bw[1], bw[2], 3, rng);
    k.add_conv("bottom_b", bw[2], bw[2], 3, rng);
    k.add_conv("dec2a", bw[2] + bw[1], bw[1], 3, rng);
    k.add_conv("dec2b", bw[1], bw[1], 3, rng);
    k.add_conv("dec1a", bw[1] + bw[0], c, 3, rng);
    k.add_conv("dec1b", c, c, 3, rng);
  }
  b.prior = make_encoder<T>("prior", 1, arch, seed);
  b.posterior = make_encoder<T>("posterior", 1 + arch.raters, arch, seed);
  {
    Rng rng(derive_seed(seed, "head"));
    b.head = Component<T>("head");
    b.head.add_conv("fc1", arch.latent_dim + c, arch.head_width, 1, rng);
    b.head.add_conv("fc2", arch.head_width, arch.head_width, 1, rng);
    b.head.add_conv("logits", arch.head_width, 1, 1, rng, 1.0);
  }
  b.reset_projections(derive_seed(seed, "projections"));
  return b;
}

template <typename T>
void ModelBundle<T>::reset_projections(std::uint64_t projection_seed) {
  projections.clear();
  for (int r = 0; r < arch.raters; ++r) {
    const auto name = projection_name(r);
    Rng rng(derive_seed(projection_seed, name));
    Component<T> p(name);
    p.add_conv("conv1", arch.feature_channels, arch.projection_width, 3, rng);
    p.add_conv("conv2", arch.projection_width, arch.latent_dim, 3, rng, 1.0);
    projections.push_back(std::move(p));
  }
}

template <typename T>
std::vector<Component<T>*> ModelBundle<T>::components() {
  std::vector<Component<T>*> out{&backbone, &prior, &posterior, &head};
  for (auto& p : projections) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<const Component<T>*> ModelBundle<T>::components() const {
  std::vector<const Component<T>*> out{&backbone, &prior, &posterior, &head};
  for (const auto& p : projections) out.push_back(&p);
  return out;
}

template <typename T>
Component<T>& ModelBundle<T>::component(const std::string& name) {
  for (auto* c : components())
    if (c->name() == name) return *c;
  throw std::invalid_argument("no model component named '" + name + "'");
}

template <typename T>
const Component<T>& ModelBundle<T>::component(const std::string& name) const {
  for (const auto* c : components())
    if (c->name() == name) return *c;
  throw std::invalid_argument("no model component named '" + name + "'");
}

template <typename T>
void ModelBundle<T>::freeze(std::span<const std::string> names) {
  for (const auto& n : names) {
    auto& c = component(n);
    c.set_frozen(true);
    frozen_checksums[n] = c.checksum();
  }
}

template <typename T>
void ModelBundle<T>::unfreeze_all() {
  for (auto* c : components()) c->set_frozen(false);
  frozen_checksums.clear();
}

template <typename T>
std::map<std::string, std::uint64_t> ModelBundle<T>::checksums() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto* c : components()) out[c->name()] = c->checksum();
  return out;
}

template <typename T>
std::map<std::string, std::uint64_t> ModelBundle<T>::assert_frozen() const {
  std::map<std::string, std::uint64_t> now;
  for (const auto& [name, expected] : frozen_checksums) {
    const auto actual = component(name).checksum();
    if (actual != expected) {
      throw std::runtime_error("frozen component '" + name + "' drifted: checksum " + to_hex(actual) +
                               " != " + to_hex(expected));
    }
    now[name] = actual;
  }
  return now;
}

template <typename T>
void ModelBundle<T>::zero_grad() {
  for (auto* c : components()) c->zero_grad();
}

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  Tensor<T> t({1, image.height, image.width});
  for (std::size_t i = 0; i < image.size(); ++i) t[i] = static_cast<T>(image.data[i]);
  return t;
}

template <typename T>
Tensor<T> annotation_tensor(std::span<const BinaryMask> annotations) {
  if (annotations.empty()) throw std::invalid_argument("no annotations");
  const int h = annotations[0].height, w = annotations[0].width;
  Tensor<T> t({static_cast<int>(annotations.size()), h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (std::size_t r = 0; r < annotations.size(); ++r) {
    if (annotations[r].height != h || annotations[r].width != w) throw std::invalid_argument("annotation shape mismatch");
    for (std::size_t i = 0; i < hw; ++i) t[r * hw + i] = annotations[r].data[i] ? T{1} : T{0};
  }
  return t;
}

template <typename T>
ProbabilityMap forward_diverse(const ModelBundle<T>& bundle, const Image& image, const latent::LatentCode<T>& z) {
  nn::Tape<T> tape;
  const nn::Var x = tape.constant(image_tensor<T>(image));
  const nn::Var f = backbone_forward(tape, bundle, x);
  const nn::Var zv = tape.constant(Tensor<T>({z.dim()}, z.values));
  const auto& p = tape.value(head_probabilities(tape, bundle, zv, f));
  ProbabilityMap out(image.height, image.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = static_cast<float>(p[i]);
  return out;
}

template <typename T>
latent::DiagonalGaussian<T> encode_prior(const ModelBundle<T>& bundle, const Image& image) {
  nn::Tape<T> tape;
  const auto g = encode_prior(tape, bundle, tape.constant(image_tensor<T>(image)));
  return {tape.value(g.mean).data, tape.value(g.log_sigma).data};
}

template <typename T>
latent::DiagonalGaussian<T> encode_posterior(const ModelBundle<T>& bundle, const Image& image,
                                             std::span<const BinaryMask> annotations) {
  if (static_cast<int>(annotations.size()) != bundle.arch.raters) {
    throw std::invalid_argument("posterior expects exactly R annotations");
  }
  nn::Tape<T> tape;
  const auto g = encode_posterior(tape, bundle, tape.constant(image_tensor<T>(image)),
                                  tape.constant(annotation_tensor<T>(annotations)));
  return {tape.value(g.mean).data, tape.value(g.log_sigma).data};
}

#define DPERSONA_INSTANTIATE_MODEL(T)                                                                        \
  template class Component<T>;                                                                               \
  template struct ModelBundle<T>;                                                                            \
  template Tensor<T> image_tensor<T>(const Image&);                                                          \
  template Tensor<T> annotation_tensor<T>(std::span<const BinaryMask>);                                      \
  template ProbabilityMap forward_diverse<T>(const ModelBundle<T>&, const Image&, const latent::LatentCode<T>&); \
  template latent::DiagonalGaussian<T> encode_prior<T>(const ModelBundle<T>&, const Image&);                 \
  template latent::DiagonalGaussian<T> encode_posterior<T>(const ModelBundle<T>&, const Image&,             \
                                                           std::span<const BinaryMask>);

DPERSONA_INSTANTIATE_MODEL(float)
DPERSONA_INSTANTIATE_MODEL(double)

}  // namespace dpersona::model
