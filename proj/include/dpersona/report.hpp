#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpersona/metrics.hpp"
#include "dpersona/tensor.hpp"

// Result tables (text + CSV) and static PNG overlays.
namespace dpersona::report {

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t* at(int y, int x) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
};

void write_png(const std::filesystem::path& path, const RgbImage& image);

/// Rows ordered by method then sampling number; "-" marks absent values.
std::string table_text(const std::vector<metrics::EvalReport>& rows, int raters);
std::string table_csv(const std::vector<metrics::EvalReport>& rows, int raters);

/// Grey image with mask boundaries drawn in `color`, upscaled by `scale`.
RgbImage overlay(const Image& image, const std::vector<BinaryMask>& masks,
                 const std::vector<std::array<std::uint8_t, 3>>& colors, int scale);

/// Horizontal strip of tiles separated by `gap` white pixels.
RgbImage hstack(const std::vector<RgbImage>& tiles, int gap = 2);
RgbImage vstack(const std::vector<RgbImage>& rows, int gap = 2);

/// Image with all annotations, followed by diversified samples.
RgbImage diversified_panel(const Image& image, const std::vector<BinaryMask>& annotations,
                           const std::vector<ProbabilityMap>& samples, int scale = 3);

/// One tile per rater: annotation boundary (green) and personalized prediction (red).
RgbImage personalized_panel(const Image& image, const std::vector<BinaryMask>& annotations,
                            const std::vector<ProbabilityMap>& predictions, int scale = 3);

}  // namespace dpersona::report
