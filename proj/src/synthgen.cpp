#include "dpersona/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "dpersona/hashing.hpp"

namespace dpersona::synthgen {

void RaterProfile::validate() const {
  if (!(flip_noise >= 0.0 && flip_noise <= 0.05)) throw std::invalid_argument("rater flip_noise must be in [0, 0.05]");
  if (!(deformation_amplitude >= 0.0)) throw std::invalid_argument("rater deformation_amplitude must be >= 0");
  if (!std::isfinite(boundary_offset)) throw std::invalid_argument("rater boundary_offset must be finite");
}

void validate_profiles(const std::vector<RaterProfile>& profiles) {
  if (profiles.size() < 2) throw std::invalid_argument("at least two raters are required");
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    profiles[i].validate();
    if (profiles[i].rank_index != static_cast<int>(i)) throw std::invalid_argument("rater rank_index must equal its position");
    if (i > 0 && !(profiles[i].boundary_offset > profiles[i - 1].boundary_offset)) {
      throw std::invalid_argument("rater boundary offsets must be strictly increasing with rank");
    }
  }
}

std::vector<RaterProfile> default_profiles(int raters) {
  if (raters < 2) throw std::invalid_argument("at least two raters are required");
  std::vector<RaterProfile> out;
  for (int i = 0; i < raters; ++i) {
    double offset;
    if (raters <= 5) offset = std::round(-2.0 + 4.0 * i / (raters - 1));
    else offset = i - raters / 2;
    out.push_back({i, offset, 1.0, 0.02});
  }
  validate_profiles(out);
  return out;
}

BinaryMask rasterize(const ShapeParams& s, int height, int width) {
  BinaryMask m(height, width);
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dy = y - s.center_y, dx = x - s.center_x;
      const double u = c * dx + sn * dy;
      const double v = -sn * dx + c * dy;
      const double level = (u / s.radius_x) * (u / s.radius_x) + (v / s.radius_y) * (v / s.radius_y);
      double f = 1.0;
      if (s.amplitudes[0] != 0 || s.amplitudes[1] != 0 || s.amplitudes[2] != 0) {
        const double phi = std::atan2(v, u);
        for (int k = 0; k < 3; ++k) f += s.amplitudes[k] * std::cos((k + 2) * phi + s.phases[k]);
      }
      m.at(y, x) = level <= f * f ? 1 : 0;
    }
  }
  return m;
}

ShapeParams sample_shape(Rng& rng, int height, int width, const ShapeOptions& o) {
  const double side = std::min(height, width);
  ShapeParams s;
  s.center_y = uniform(rng, 0.35, 0.65) * (height - 1);
  s.center_x = uniform(rng, 0.35, 0.65) * (width - 1);
  s.radius_y = uniform(rng, o.min_radius_fraction, o.max_radius_fraction) * side;
  s.radius_x = uniform(rng, o.min_radius_fraction, o.max_radius_fraction) * side;
  s.rotation = uniform(rng, 0.0, std::numbers::pi);
  for (int k = 0; k < 3; ++k) {
    s.amplitudes[k] = uniform(rng, 0.0, o.max_amplitude);
    s.phases[k] = uniform(rng, 0.0, 2 * std::numbers::pi);
  }
  return s;
}

ImageStyle sample_style(Rng& rng, const ShapeOptions& o) {
  ImageStyle st;
  st.contrast = uniform(rng, 0.6, 1.4);
  st.blur_sigma = uniform(rng, o.min_blur, o.max_blur);
  st.noise_sigma = uniform(rng, o.min_noise, o.max_noise);
  return st;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

// Separable convolution with edge replication.
std::vector<double> blur(const std::vector<double>& in, int h, int w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void distance_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k]) --k;
      else break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace

Image render_image(const BinaryMask& mask, const ImageStyle& style, Rng& rng) {
  const int h = mask.height, w = mask.width;
  std::vector<double> v(mask.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask.data[i] ? style.contrast : 0.0;
  v = blur(v, h, w, style.blur_sigma);
  std::normal_distribution<double> noise(0.0, style.noise_sigma);
  for (auto& x : v) x += noise(rng);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  Image img(h, w);
  for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = static_cast<float>(sd > 0 ? (v[i] - mean) / sd : 0.0);
  return img;
}

BaseShape generate_base_shape(std::uint64_t seed, int height, int width, const ShapeOptions& options) {
  if (height < 32 || width < 32) throw std::invalid_argument("synthetic images must be at least 32x32");
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    Rng rng(attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    const auto shape = sample_shape(rng, height, width, options);
    auto mask = rasterize(shape, height, width);
    if (foreground_count(mask) < static_cast<std::size_t>(kMinForeground)) continue;
    const auto style = sample_style(rng, options);
    auto image = render_image(mask, style, rng);
    return {std::move(mask), std::move(image), attempt + 1};
  }
  throw std::runtime_error("degenerate blob after " + std::to_string(kMaxRetries) + " retries");
}

Plane<double> squared_distance_to(const BinaryMask& mask, std::uint8_t target) {
  const int h = mask.height, w = mask.width;
  const double inf = std::numeric_limits<double>::infinity();
  Plane<double> out(h, w);
  for (std::size_t i = 0; i < mask.size(); ++i) out.data[i] = (mask.data[i] != 0) == (target != 0) ? 0.0 : inf;
  const int n = std::max(h, w);
  std::vector<double> f, d;
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  for (int x = 0; x < w; ++x) {
    f.resize(h);
    d.resize(h);
    for (int y = 0; y < h; ++y) f[y] = out.at(y, x);
    distance_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) out.at(y, x) = d[y];
  }
  for (int y = 0; y < h; ++y) {
    f.resize(w);
    d.resize(w);
    for (int x = 0; x < w; ++x) f[x] = out.at(y, x);
    distance_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) out.at(y, x) = d[x];
  }
  return out;
}

BinaryMask morphological_offset(const BinaryMask& mask, double offset) {
  if (offset == 0.0) {
    BinaryMask m = mask;
    for (auto& v : m.data) v = v != 0;
    return m;
  }
  BinaryMask out(mask.height, mask.width);
  const double r2 = offset * offset;
  if (offset > 0) {
    const auto d = squared_distance_to(mask, 1);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = d.data[i] <= r2 ? 1 : 0;
  } else {
    const auto d = squared_distance_to(mask, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (mask.data[i] && d.data[i] > r2) ? 1 : 0;
  }
  return out;
}

BinaryMask smooth_warp(const BinaryMask& mask, double amplitude, Rng& rng) {
  const int h = mask.height, w = mask.width;
  constexpr int kTerms = 3;
  struct Wave {
    double fy, fx, phase, weight;
  };
  std::array<std::array<Wave, kTerms>, 2> waves;
  for (auto& field : waves) {
    for (auto& wv : field) {
      wv.fy = uniform(rng, -2.0, 2.0) / h;
      wv.fx = uniform(rng, -2.0, 2.0) / w;
      wv.phase = uniform(rng, 0.0, 2 * std::numbers::pi);
      wv.weight = uniform(rng, 0.5, 1.0);
    }
  }
  if (amplitude == 0.0) return mask;
  auto displacement = [&](const std::array<Wave, kTerms>& field, int y, int x) {
    double acc = 0.0, total = 0.0;
    for (const auto& wv : field) {
      acc += wv.weight * std::sin(2 * std::numbers::pi * (wv.fy * y + wv.fx * x) + wv.phase);
      total += wv.weight;
    }
    return amplitude * acc / total;
  };
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = static_cast<int>(std::lround(y + displacement(waves[0], y, x)));
      const int sx = static_cast<int>(std::lround(x + displacement(waves[1], y, x)));
      out.at(y, x) = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? (mask.at(sy, sx) != 0) : 0;
    }
  return out;
}

namespace {

BinaryMask most_interior_pixel(const BinaryMask& mask) {
  const auto d = squared_distance_to(mask, 0);
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.data[i] && d.data[i] > best_d) {
      best_d = d.data[i];
      best = i;
    }
  }
  BinaryMask out(mask.height, mask.width);
  out.data[best] = 1;
  return out;
}

}  // namespace

BinaryMask rater_annotate(const BinaryMask& true_mask, const RaterProfile& profile, Rng& rng) {
  profile.validate();
  if (foreground_count(true_mask) == 0) throw std::invalid_argument("rater_annotate needs a nonempty mask");
  const BinaryMask warped = smooth_warp(true_mask, profile.deformation_amplitude, rng);
  BinaryMask out = morphological_offset(warped, profile.boundary_offset);
  if (profile.flip_noise > 0.0) {
    const auto to_fg = squared_distance_to(out, 1);
    const auto to_bg = squared_distance_to(out, 0);
    const double band2 = static_cast<double>(kFlipBand) * kFlipBand;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = out.data[i] ? to_bg.data[i] : to_fg.data[i];
      if (d <= band2 && u(rng) < profile.flip_noise) out.data[i] = out.data[i] ? 0 : 1;
    }
  }
  if (foreground_count(out) == 0) {
    out = most_interior_pixel(foreground_count(warped) > 0 ? warped : true_mask);
  }
  return out;
}

MultiRaterSample generate_sample(std::uint64_t master_seed, const std::string& sample_id, int height, int width,
                                 const std::vector<RaterProfile>& profiles, const ShapeOptions& options) {
  validate_profiles(profiles);
  MultiRaterSample s;
  s.sample_id = sample_id;
  s.seed = derive_seed(master_seed, sample_id);
  auto base = generate_base_shape(derive_seed(s.seed, "shape"), height, width, options);
  s.true_mask = std::move(base.mask);
  s.image = std::move(base.image);
  for (const auto& p : profiles) {
    Rng rng(derive_seed(s.seed, "rater_" + std::to_string(p.rank_index)));
    s.annotations.push_back(rater_annotate(s.true_mask, p, rng));
  }
  return s;
}

}  // namespace dpersona::synthgen
