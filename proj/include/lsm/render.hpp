#pragma once

// Diagnostic figure: input magnitude, thresholded prediction and ground truth
// stacked top to bottom, one image cell per data cell (times `scale`).
// Requires libpng at link time.

#include <png.h>

#include <cstdio>
#include <sstream>

#include "lsm/encode.hpp"

namespace lsm {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(std::size_t(w) * h * 3, 0) {}

  std::array<std::uint8_t, 3> at(int x, int y) const {
    const auto* p = rgb.data() + (std::size_t(y) * width + x) * 3;
    return {p[0], p[1], p[2]};
  }
  void put(int x, int y, std::array<std::uint8_t, 3> c) {
    auto* p = rgb.data() + (std::size_t(y) * width + x) * 3;
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  bool operator==(const Image&) const = default;
};

struct RenderOptions {
  double threshold = 0.5;
  int scale = 1;
};

inline constexpr std::array<std::uint8_t, 3> kFlagColor{255, 255, 255};
inline constexpr std::array<std::uint8_t, 3> kBlank{0, 0, 0};

/// Panel height is input.rows * scale; image height is three panels.
inline Image render_figure(const Grid<double>& input, const ScoreMap& scores, const Grid<std::uint8_t>& mask,
                           const RenderOptions& opt = {}) {
  if (!input.same_shape(scores) || !input.same_shape(mask)) throw DataError("figure inputs differ in shape");
  if (opt.scale < 1) throw ConfigError("render scale must be >= 1");
  const int s = opt.scale, ph = input.rows * s;
  Image img(input.cols * s, 3 * ph);
  for (int r = 0; r < input.rows; ++r)
    for (int c = 0; c < input.cols; ++c) {
      const auto g = std::uint8_t(std::lround(std::clamp(input(r, c), 0.0, 1.0) * 255.0));
      const std::array<std::array<std::uint8_t, 3>, 3> cells{
          std::array<std::uint8_t, 3>{g, g, g}, scores(r, c) > opt.threshold ? kFlagColor : kBlank,
          mask(r, c) ? kFlagColor : kBlank};
      for (int panel = 0; panel < 3; ++panel)
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) img.put(c * s + dx, panel * ph + r * s + dy, cells[std::size_t(panel)]);
    }
  return img;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.width < 1 || img.height < 1) throw DataError("cannot write an empty image");
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  std::FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (fp == nullptr) throw IoError("cannot open " + tmp.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + std::size_t(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  const bool ok = std::fclose(fp) == 0;
  if (!ok) throw IoError("short write to " + tmp.string());
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

/// Reads 8-bit RGB / RGBA / gray PNGs into RGB.
inline Image read_png(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (fp == nullptr) throw IoError("cannot open " + path.string() + " for reading");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("not a readable PNG: " + path.string(), 0);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Image img(int(png_get_image_width(png, info)), int(png_get_image_height(png, info)));
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.rgb.data() + std::size_t(y) * img.width * 3, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

/// One <rect> per horizontal run of equal color.
inline std::string to_svg(const Image& img) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << img.width << "\" height=\"" << img.height
      << "\" viewBox=\"0 0 " << img.width << " " << img.height << "\" shape-rendering=\"crispEdges\">\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width;) {
      const auto c = img.at(x, y);
      int end = x + 1;
      while (end < img.width && img.at(end, y) == c) ++end;
      char color[8];
      std::snprintf(color, sizeof color, "#%02x%02x%02x", c[0], c[1], c[2]);
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << end - x << "\" height=\"1\" fill=\"" << color
          << "\"/>\n";
      x = end;
    }
  out << "</svg>\n";
  return out.str();
}

inline void write_svg(const Image& img, const std::filesystem::path& path) { write_file_atomic(path, to_svg(img)); }

}  // namespace lsm
