#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dpersona/random.hpp"
#include "dpersona/tensor.hpp"

// Procedural multi-rater benchmark: blurred star-convex blobs annotated by
// simulated raters ranked from conservative (eroding) to aggressive (dilating).
namespace dpersona::synthgen {

inline constexpr int kGeneratorVersion = 1;
inline constexpr int kMinForeground = 16;
inline constexpr int kMaxRetries = 10;
inline constexpr int kFlipBand = 3;

struct RaterProfile {
  int rank_index = 0;
  double boundary_offset = 0.0;        // < 0 erodes, > 0 dilates
  double deformation_amplitude = 0.0;  // px
  double flip_noise = 0.0;             // in [0, 0.05]

  void validate() const;
  bool operator==(const RaterProfile&) const = default;
};

/// Offsets strictly increasing with rank and flip noise in range.
void validate_profiles(const std::vector<RaterProfile>& profiles);

/// R ranked profiles: offsets round(linspace(-2, 2, R)) de-duplicated to a
/// strictly increasing sequence, deformation 1 px, flip noise 0.02.
std::vector<RaterProfile> default_profiles(int raters);

/// Ellipse with radial Fourier perturbation
/// r(phi) = r_ellipse(phi) * (1 + sum_k amp[k] cos((k+2) phi + phase[k])).
struct ShapeParams {
  double center_y = 0.0, center_x = 0.0;
  double radius_y = 1.0, radius_x = 1.0;
  double rotation = 0.0;
  std::array<double, 3> amplitudes{};
  std::array<double, 3> phases{};
};

struct ImageStyle {
  double contrast = 1.0;
  double blur_sigma = 2.0;
  double noise_sigma = 0.2;
};

struct ShapeOptions {
  double min_radius_fraction = 0.10;
  double max_radius_fraction = 0.20;
  double max_amplitude = 0.12;
  double min_blur = 1.0, max_blur = 3.0;
  double min_noise = 0.1, max_noise = 0.35;
};

BinaryMask rasterize(const ShapeParams& shape, int height, int width);

ShapeParams sample_shape(Rng& rng, int height, int width, const ShapeOptions& options = {});
ImageStyle sample_style(Rng& rng, const ShapeOptions& options = {});

/// Contrast, separable Gaussian blur, additive noise, then per-image standardisation.
Image render_image(const BinaryMask& mask, const ImageStyle& style, Rng& rng);

struct BaseShape {
  BinaryMask mask;
  Image image;
  int attempts = 1;
};

/// Retries with derived sub-seeds while the mask has fewer than
/// kMinForeground pixels; throws after kMaxRetries retries.
BaseShape generate_base_shape(std::uint64_t seed, int height, int width, const ShapeOptions& options = {});

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// mask == target (exact, separable). Pixels with no such pixel get +inf.
Plane<double> squared_distance_to(const BinaryMask& mask, std::uint8_t target);

/// offset > 0: pixels within `offset` of the foreground; offset < 0: pixels
/// farther than |offset| from the background.
BinaryMask morphological_offset(const BinaryMask& mask, double offset);

/// Nearest-neighbour resampling through a smooth sinusoidal displacement
/// field bounded by `amplitude` pixels. amplitude 0 is the identity.
BinaryMask smooth_warp(const BinaryMask& mask, double amplitude, Rng& rng);

BinaryMask rater_annotate(const BinaryMask& true_mask, const RaterProfile& profile, Rng& rng);

struct MultiRaterSample {
  std::string sample_id;
  std::uint64_t seed = 0;
  Image image;
  std::vector<BinaryMask> annotations;
  BinaryMask true_mask;
};

/// Pure function of (master_seed, sample_id, shape, profiles).
MultiRaterSample generate_sample(std::uint64_t master_seed, const std::string& sample_id, int height, int width,
                                 const std::vector<RaterProfile>& profiles, const ShapeOptions& options = {});

}  // namespace dpersona::synthgen
