#include "dpersona/report.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dpersona::report {

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&image.pixels[static_cast<std::size_t>(y) * image.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

namespace {

std::string fmt(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

int method_rank(const std::string& m) {
  static const std::map<std::string, int> order{{"prob-unet", 0}, {"stage1", 1}, {"mv", 2},
                                                {"rs", 3},        {"staple", 4}, {"stage2", 6}};
  if (auto it = order.find(m); it != order.end()) return it->second;
  return 5;  // single-rater:<i>
}

std::vector<metrics::EvalReport> sorted(std::vector<metrics::EvalReport> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    const int ra = method_rank(a.method), rb = method_rank(b.method);
    if (ra != rb) return ra < rb;
    if (a.method != b.method) return a.method < b.method;
    return a.sampling_number < b.sampling_number;
  });
  return rows;
}

std::vector<std::vector<std::string>> cells(const std::vector<metrics::EvalReport>& rows, int raters) {
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> head{"method", "#", "GED", "Dice_soft", "Dice_max", "Dice_match"};
  for (int r = 1; r <= raters; ++r) head.push_back("Dice_A" + std::to_string(r));
  head.push_back("Dice_mean");
  out.push_back(head);
  for (const auto& rep : sorted(rows)) {
    rep.check_invariants();
    std::vector<std::string> row{rep.method, std::to_string(rep.sampling_number), fmt(rep.ged), fmt(rep.dice_soft),
                                 rep.dice_max ? fmt(*rep.dice_max) : "-", rep.dice_match ? fmt(*rep.dice_match) : "-"};
    for (int r = 0; r < raters; ++r) row.push_back(r < static_cast<int>(rep.per_rater.size()) ? fmt(rep.per_rater[r]) : "-");
    row.push_back(rep.per_rater.empty() ? "-" : fmt(rep.dice_mean));
    out.push_back(row);
  }
  return out;
}

}  // namespace

std::string table_text(const std::vector<metrics::EvalReport>& rows, int raters) {
  const auto c = cells(rows, raters);
  std::vector<std::size_t> width(c[0].size(), 0);
  for (const auto& row : c)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream out;
  for (std::size_t k = 0; k < c.size(); ++k) {
    for (std::size_t i = 0; i < c[k].size(); ++i) {
      out << (i ? "  " : "");
      out << c[k][i] << std::string(width[i] - c[k][i].size(), ' ');
    }
    out << "\n";
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << std::string(total - 2, '-') << "\n";
    }
  }
  return out.str();
}

std::string table_csv(const std::vector<metrics::EvalReport>& rows, int raters) {
  std::ostringstream out;
  for (const auto& row : cells(rows, raters)) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << (row[i] == "-" ? "" : row[i]);
    out << "\n";
  }
  return out.str();
}

RgbImage overlay(const Image& image, const std::vector<BinaryMask>& masks,
                 const std::vector<std::array<std::uint8_t, 3>>& colors, int scale) {
  const int h = image.height, w = image.width;
  RgbImage out(h * scale, w * scale);
  for (int y = 0; y < h * scale; ++y)
    for (int x = 0; x < w * scale; ++x) {
      const double v = std::clamp((image.at(y / scale, x / scale) + 2.5) / 5.0, 0.0, 1.0);
      auto* p = out.at(y, x);
      p[0] = p[1] = p[2] = static_cast<std::uint8_t>(std::lround(v * 255));
    }
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const auto& m = masks[k];
    const auto& col = colors[k % colors.size()];
    auto fg = [&](int y, int x) { return y >= 0 && y < h * scale && x >= 0 && x < w * scale && m.at(y / scale, x / scale); };
    for (int y = 0; y < h * scale; ++y)
      for (int x = 0; x < w * scale; ++x) {
        if (!fg(y, x)) continue;
        if (fg(y - 1, x) && fg(y + 1, x) && fg(y, x - 1) && fg(y, x + 1)) continue;
        std::copy(col.begin(), col.end(), out.at(y, x));
      }
  }
  return out;
}

RgbImage hstack(const std::vector<RgbImage>& tiles, int gap) {
  if (tiles.empty()) return {};
  int h = 0, w = 0;
  for (const auto& t : tiles) {
    h = std::max(h, t.height);
    w += t.width;
  }
  w += gap * static_cast<int>(tiles.size() - 1);
  RgbImage out(h, w);
  std::fill(out.pixels.begin(), out.pixels.end(), 255);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int y = 0; y < t.height; ++y)
      std::copy_n(&t.pixels[static_cast<std::size_t>(y) * t.width * 3], t.width * 3, out.at(y, x0));
    x0 += t.width + gap;
  }
  return out;
}

RgbImage vstack(const std::vector<RgbImage>& rows, int gap) {
  if (rows.empty()) return {};
  int h = 0, w = 0;
  for (const auto& r : rows) {
    w = std::max(w, r.width);
    h += r.height;
  }
  h += gap * static_cast<int>(rows.size() - 1);
  RgbImage out(h, w);
  std::fill(out.pixels.begin(), out.pixels.end(), 255);
  int y0 = 0;
  for (const auto& r : rows) {
    for (int y = 0; y < r.height; ++y)
      std::copy_n(&r.pixels[static_cast<std::size_t>(y) * r.width * 3], r.width * 3, out.at(y0 + y, 0));
    y0 += r.height + gap;
  }
  return out;
}

namespace {

const std::vector<std::array<std::uint8_t, 3>> kRaterColors{{0, 114, 178}, {0, 158, 115}, {230, 159, 0}, {213, 94, 0},
                                                            {204, 121, 167}, {86, 180, 233}};

}  // namespace

RgbImage diversified_panel(const Image& image, const std::vector<BinaryMask>& annotations,
                           const std::vector<ProbabilityMap>& samples, int scale) {
  std::vector<RgbImage> tiles{overlay(image, {}, kRaterColors, scale), overlay(image, annotations, kRaterColors, scale)};
  for (const auto& s : samples) tiles.push_back(overlay(image, {binarize(s)}, {{{220, 20, 60}}}, scale));
  return hstack(tiles);
}

RgbImage personalized_panel(const Image& image, const std::vector<BinaryMask>& annotations,
                            const std::vector<ProbabilityMap>& predictions, int scale) {
  std::vector<RgbImage> tiles{overlay(image, {}, kRaterColors, scale)};
  for (std::size_t r = 0; r < annotations.size(); ++r) {
    std::vector<BinaryMask> masks{annotations[r]};
    if (r < predictions.size()) masks.push_back(binarize(predictions[r]));
    tiles.push_back(overlay(image, masks, {{{0, 200, 0}}, {{220, 20, 60}}}, scale));
  }
  return hstack(tiles);
}

}  // namespace dpersona::report
