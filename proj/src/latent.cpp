#include "dpersona/latent.hpp"

#include <cmath>
#include <stdexcept>

namespace dpersona::latent {
namespace {

template <typename T>
struct ClampedSigma {
  T value;
  bool active;  // false when the floor clamps
};

template <typename T>
ClampedSigma<T> clamp_sigma(T log_sigma, T floor) {
  const T s = std::exp(log_sigma);
  if (s < floor) return {floor, false};
  return {s, true};
}

// Per-dimension KL(a || b) and its partials w.r.t. (mu_a, ls_a, mu_b, ls_b).
template <typename T>
struct KlTerm {
  T value, d_mu_a, d_ls_a, d_mu_b, d_ls_b;
};

template <typename T>
KlTerm<T> kl_term(T mu_a, T ls_a, T mu_b, T ls_b, T floor) {
  const auto sa = clamp_sigma(ls_a, floor);
  const auto sb = clamp_sigma(ls_b, floor);
  const T var_a = sa.value * sa.value;
  const T var_b = sb.value * sb.value;
  const T diff = mu_a - mu_b;
  KlTerm<T> t{};
  t.value = std::log(sb.value) - std::log(sa.value) + (var_a + diff * diff) / (T{2} * var_b) - T(0.5);
  t.d_mu_a = diff / var_b;
  t.d_mu_b = -diff / var_b;
  t.d_ls_a = sa.active ? T{-1} + var_a / var_b : T{};
  t.d_ls_b = sb.active ? T{1} - (var_a + diff * diff) / var_b : T{};
  return t;
}

void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("latent dimension mismatch");
}

}  // namespace

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "prior_to_post") return KlDirection::prior_to_post;
  if (s == "post_to_prior") return KlDirection::post_to_prior;
  throw std::invalid_argument("unknown kl_direction '" + s + "' (expected prior_to_post or post_to_prior)");
}

std::string to_string(KlDirection d) { return d == KlDirection::prior_to_post ? "prior_to_post" : "post_to_prior"; }

template <typename T>
std::vector<T> DiagonalGaussian<T>::sigma() const {
  std::vector<T> s(log_sigma.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(log_sigma[i]);
  return s;
}

template <typename T>
DiagonalGaussian<T> DiagonalGaussian<T>::from_sigma(std::vector<T> mean, const std::vector<T>& sigma) {
  require_same_dim(mean.size(), sigma.size());
  DiagonalGaussian g;
  g.mean = std::move(mean);
  g.log_sigma.resize(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) g.log_sigma[i] = std::log(sigma[i]);
  return g;
}

template <typename T>
void DiagonalGaussian<T>::validate() const {
  require_same_dim(mean.size(), log_sigma.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(log_sigma[i])) {
      throw std::invalid_argument("diagonal Gaussian has non-finite parameters");
    }
  }
}

template <typename T>
std::vector<T> PriorBank<T>::column(int m) const {
  const int d = dim(), n = size();
  std::vector<T> c(d);
  for (int i = 0; i < d; ++i) c[i] = columns[static_cast<std::size_t>(i) * n + m];
  return c;
}

template <typename T>
T kl_divergence(const DiagonalGaussian<T>& prior, const DiagonalGaussian<T>& posterior, KlDirection direction,
                T sigma_floor) {
  require_same_dim(prior.mean.size(), posterior.mean.size());
  require_same_dim(prior.mean.size(), prior.log_sigma.size());
  require_same_dim(posterior.mean.size(), posterior.log_sigma.size());
  const auto& a = direction == KlDirection::prior_to_post ? prior : posterior;
  const auto& b = direction == KlDirection::prior_to_post ? posterior : prior;
  T total{};
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    total += kl_term(a.mean[i], a.log_sigma[i], b.mean[i], b.log_sigma[i], sigma_floor).value;
  }
  return total;
}

template <typename T>
KlGradient<T> kl_divergence_gradient(const DiagonalGaussian<T>& prior, const DiagonalGaussian<T>& posterior,
                                     KlDirection direction, T sigma_floor) {
  require_same_dim(prior.mean.size(), posterior.mean.size());
  const std::size_t d = prior.mean.size();
  KlGradient<T> g{std::vector<T>(d), std::vector<T>(d), std::vector<T>(d), std::vector<T>(d)};
  const bool prior_first = direction == KlDirection::prior_to_post;
  for (std::size_t i = 0; i < d; ++i) {
    if (prior_first) {
      auto t = kl_term(prior.mean[i], prior.log_sigma[i], posterior.mean[i], posterior.log_sigma[i], sigma_floor);
      g.prior_mean[i] = t.d_mu_a;
      g.prior_log_sigma[i] = t.d_ls_a;
      g.posterior_mean[i] = t.d_mu_b;
      g.posterior_log_sigma[i] = t.d_ls_b;
    } else {
      auto t = kl_term(posterior.mean[i], posterior.log_sigma[i], prior.mean[i], prior.log_sigma[i], sigma_floor);
      g.posterior_mean[i] = t.d_mu_a;
      g.posterior_log_sigma[i] = t.d_ls_a;
      g.prior_mean[i] = t.d_mu_b;
      g.prior_log_sigma[i] = t.d_ls_b;
    }
  }
  return g;
}

template <typename T>
LatentCode<T> reparameterize(std::span<const T> mean, std::span<const T> sigma, std::span<const T> noise) {
  require_same_dim(mean.size(), sigma.size());
  require_same_dim(mean.size(), noise.size());
  LatentCode<T> z{std::vector<T>(mean.size())};
  for (std::size_t i = 0; i < mean.size(); ++i) z.values[i] = mean[i] + sigma[i] * noise[i];
  return z;
}

template <typename T>
LatentCode<T> sample_reparameterized(const DiagonalGaussian<T>& g, Rng& rng) {
  g.validate();
  const auto noise = standard_normal<T>(rng, g.mean.size());
  const auto sigma = g.sigma();
  return reparameterize<T>(g.mean, sigma, noise);
}

template <typename T>
Tensor<T> broadcast_latent(std::span<const T> z, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("broadcast_latent needs H, W >= 1");
  const int d = static_cast<int>(z.size());
  Tensor<T> out({d, height, width});
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  for (int i = 0; i < d; ++i) std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(i * hw), hw, z[i]);
  return out;
}

template <typename T>
PriorBank<T> sample_prior_bank(const DiagonalGaussian<T>& g, int count, Rng& rng) {
  if (count < 1) throw std::invalid_argument("prior bank size must be >= 1");
  g.validate();
  const int d = g.dim();
  PriorBank<T> bank;
  bank.columns = Tensor<T>({d, count});
  for (int m = 0; m < count; ++m) {
    const auto z = sample_reparameterized(g, rng);
    for (int i = 0; i < d; ++i) bank.columns[static_cast<std::size_t>(i) * count + m] = z.values[i];
  }
  return bank;
}

template <typename T>
nn::Var kl_divergence(nn::Tape<T>& tape, nn::Var prior_mean, nn::Var prior_log_sigma, nn::Var posterior_mean,
                      nn::Var posterior_log_sigma, KlDirection direction, T sigma_floor) {
  const DiagonalGaussian<T> prior{tape.value(prior_mean).data, tape.value(prior_log_sigma).data};
  const DiagonalGaussian<T> posterior{tape.value(posterior_mean).data, tape.value(posterior_log_sigma).data};
  const T value = kl_divergence(prior, posterior, direction, sigma_floor);
  auto grads = kl_divergence_gradient(prior, posterior, direction, sigma_floor);
  return tape.record(Tensor<T>({1}, value), {prior_mean, prior_log_sigma, posterior_mean, posterior_log_sigma},
                     [=, grads = std::move(grads)](nn::Tape<T>& t, const Tensor<T>& g) {
                       const T up = g[0];
                       auto add = [&](nn::Var v, const std::vector<T>& d) {
                         if (!t.requires_grad(v)) return;
                         auto& gv = t.grad(v);
                         for (std::size_t i = 0; i < d.size(); ++i) gv[i] += up * d[i];
                       };
                       add(prior_mean, grads.prior_mean);
                       add(prior_log_sigma, grads.prior_log_sigma);
                       add(posterior_mean, grads.posterior_mean);
                       add(posterior_log_sigma, grads.posterior_log_sigma);
                     });
}

template <typename T>
nn::Var reparameterize(nn::Tape<T>& tape, nn::Var mean, nn::Var log_sigma, std::span<const T> noise) {
  const auto& mu = tape.value(mean);
  const auto& ls = tape.value(log_sigma);
  require_same_dim(mu.size(), ls.size());
  require_same_dim(mu.size(), noise.size());
  Tensor<T> z({static_cast<int>(mu.size())});
  std::vector<T> scaled_noise(noise.size());  // d z / d log_sigma
  for (std::size_t i = 0; i < mu.size(); ++i) {
    scaled_noise[i] = std::exp(ls[i]) * noise[i];
    z[i] = mu[i] + scaled_noise[i];
  }
  return tape.record(std::move(z), {mean, log_sigma},
                     [mean, log_sigma, scaled_noise = std::move(scaled_noise)](nn::Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(mean)) {
                         auto& gm = t.grad(mean);
                         for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                       }
                       if (t.requires_grad(log_sigma)) {
                         auto& gs = t.grad(log_sigma);
                         for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i] * scaled_noise[i];
                       }
                     });
}

template <typename T>
nn::Var broadcast_latent(nn::Tape<T>& tape, nn::Var z, int height, int width) {
  Tensor<T> out = broadcast_latent<T>(tape.value(z).span(), height, width);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  return tape.record(std::move(out), {z}, [z, hw](nn::Tape<T>& t, const Tensor<T>& g) {
    auto& gz = t.grad(z);
    for (std::size_t d = 0; d < gz.size(); ++d) {
      T s{};
      for (std::size_t i = 0; i < hw; ++i) s += g[d * hw + i];
      gz[d] += s;
    }
  });
}

#define DPERSONA_INSTANTIATE_LATENT(T)                                                                        \
  template struct DiagonalGaussian<T>;                                                                        \
  template struct PriorBank<T>;                                                                               \
  template T kl_divergence<T>(const DiagonalGaussian<T>&, const DiagonalGaussian<T>&, KlDirection, T);        \
  template KlGradient<T> kl_divergence_gradient<T>(const DiagonalGaussian<T>&, const DiagonalGaussian<T>&,    \
                                                   KlDirection, T);                                           \
  template LatentCode<T> reparameterize<T>(std::span<const T>, std::span<const T>, std::span<const T>);       \
  template LatentCode<T> sample_reparameterized<T>(const DiagonalGaussian<T>&, Rng&);                         \
  template Tensor<T> broadcast_latent<T>(std::span<const T>, int, int);                                       \
  template PriorBank<T> sample_prior_bank<T>(const DiagonalGaussian<T>&, int, Rng&);                          \
  template nn::Var kl_divergence<T>(nn::Tape<T>&, nn::Var, nn::Var, nn::Var, nn::Var, KlDirection, T);        \
  template nn::Var reparameterize<T>(nn::Tape<T>&, nn::Var, nn::Var, std::span<const T>);                     \
  template nn::Var broadcast_latent<T>(nn::Tape<T>&, nn::Var, int, int);

DPERSONA_INSTANTIATE_LATENT(float)
DPERSONA_INSTANTIATE_LATENT(double)

}  // namespace dpersona::latent
