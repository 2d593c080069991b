#pragma once

#include <span>
#include <string>
#include <vector>

#include "dpersona/random.hpp"
#include "dpersona/tape.hpp"

// Diagonal-Gaussian algebra for the latent space: KL divergence,
// reparameterized sampling, spatial broadcast and prior banks.
namespace dpersona::latent {

enum class KlDirection {
  prior_to_post,  // KL(prior || posterior)
  post_to_prior,  // KL(posterior || prior)
};

KlDirection parse_kl_direction(const std::string& s);
std::string to_string(KlDirection d);

/// N(mean, diag(sigma^2)); sigma is stored as log sigma.
template <typename T>
struct DiagonalGaussian {
  std::vector<T> mean;
  std::vector<T> log_sigma;

  int dim() const { return static_cast<int>(mean.size()); }
  std::vector<T> sigma() const;
  static DiagonalGaussian from_sigma(std::vector<T> mean, const std::vector<T>& sigma);
  /// Throws std::invalid_argument on size mismatch or non-finite entries.
  void validate() const;
};

template <typename T>
struct LatentCode {
  std::vector<T> values;
  int dim() const { return static_cast<int>(values.size()); }
};

/// D x M matrix of i.i.d. draws from one Gaussian, stored row-major [D,M].
template <typename T>
struct PriorBank {
  Tensor<T> columns;
  std::uint64_t source_seed = 0;

  int dim() const { return columns.dim(0); }
  int size() const { return columns.dim(1); }
  std::vector<T> column(int m) const;
};

/// Closed-form KL between diagonal Gaussians. sigma values below
/// `sigma_floor` are clamped (gradient zero there); floor 0 disables clamping.
template <typename T>
T kl_divergence(const DiagonalGaussian<T>& prior, const DiagonalGaussian<T>& posterior, KlDirection direction,
                T sigma_floor = T(1e-6));

template <typename T>
struct KlGradient {
  std::vector<T> prior_mean, prior_log_sigma, posterior_mean, posterior_log_sigma;
};

template <typename T>
KlGradient<T> kl_divergence_gradient(const DiagonalGaussian<T>& prior, const DiagonalGaussian<T>& posterior,
                                     KlDirection direction, T sigma_floor = T(1e-6));

/// z = mean + sigma * noise. sigma may be zero.
template <typename T>
LatentCode<T> reparameterize(std::span<const T> mean, std::span<const T> sigma, std::span<const T> noise);

template <typename T>
LatentCode<T> sample_reparameterized(const DiagonalGaussian<T>& g, Rng& rng);

/// output[d,h,w] = z[d]
template <typename T>
Tensor<T> broadcast_latent(std::span<const T> z, int height, int width);

template <typename T>
PriorBank<T> sample_prior_bank(const DiagonalGaussian<T>& g, int count, Rng& rng);

// Tape ops ------------------------------------------------------------------

template <typename T>
nn::Var kl_divergence(nn::Tape<T>& tape, nn::Var prior_mean, nn::Var prior_log_sigma, nn::Var posterior_mean,
                      nn::Var posterior_log_sigma, KlDirection direction, T sigma_floor);

/// z = mean + exp(log_sigma) * noise, noise held constant.
template <typename T>
nn::Var reparameterize(nn::Tape<T>& tape, nn::Var mean, nn::Var log_sigma, std::span<const T> noise);

/// [D] -> [D,H,W]; the gradient sums over space.
template <typename T>
nn::Var broadcast_latent(nn::Tape<T>& tape, nn::Var z, int height, int width);

}  // namespace dpersona::latent
