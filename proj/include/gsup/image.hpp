// Float image container with PNG / raw-float I/O and resampling.
//
// Pixels live at integer coordinates with (0,0) the center of the top-left
// pixel; every resampler maps destination to source via
// src = (dst + 0.5) * (src_extent / dst_extent) - 0.5.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "gsup/vecmath.hpp"

namespace gsup {

struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;  // row-major, interleaved channels

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(std::size_t(w) * h * c, fill) {}

  float& at(int x, int y, int c) {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  float at_clamped(int x, int y, int c) const {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return at(x, y, c);
  }
};

enum class ResampleMethod { kNearest, kBilinear, kBicubic, kLanczos };

inline ResampleMethod resample_method_from_string(const std::string& s) {
  if (s == "nearest") return ResampleMethod::kNearest;
  if (s == "bilinear") return ResampleMethod::kBilinear;
  if (s == "bicubic") return ResampleMethod::kBicubic;
  if (s == "lanczos") return ResampleMethod::kLanczos;
  throw Error("unknown resample method '" + s + "'");
}

namespace detail {

// Catmull-Rom cubic kernel (a = -0.5).
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

// Lanczos-3 windowed sinc.
inline double lanczos3_weight(double t) {
  t = std::fabs(t);
  if (t < 1e-12) return 1.0;
  if (t >= 3.0) return 0.0;
  const double pt = 3.141592653589793 * t;
  return 3.0 * std::sin(pt) * std::sin(pt / 3.0) / (pt * pt);
}

}  // namespace detail

/// Separable resampling to an arbitrary size. Border handling clamps to the
/// edge pixel. Used by `upsample` and the Lanczos downsampling path.
inline Image resample(const Image& src, int out_w, int out_h, ResampleMethod m) {
  if (out_w < 1 || out_h < 1) throw Error("resample: output size must be >= 1");
  const double sx = double(src.width) / out_w;
  const double sy = double(src.height) / out_h;
  Image dst(out_w, out_h, src.channels);

  // Per-axis tap tables (positions + weights), identical math for x and y.
  struct Taps {
    std::vector<int> first;        // first source index per output index
    std::vector<double> weights;   // taps_per * size entries
    int taps_per = 0;
  };
  auto build = [&](int out_n, int src_n, double scale) {
    Taps t;
    const bool down = scale > 1.0;
    double support;
    switch (m) {
      case ResampleMethod::kNearest: support = 0.5; break;
      case ResampleMethod::kBilinear: support = 1.0; break;
      case ResampleMethod::kBicubic: support = 2.0; break;
      case ResampleMethod::kLanczos: support = 3.0; break;
      default: support = 1.0;
    }
    const double span = down && m == ResampleMethod::kLanczos ? support * scale : support;
    t.taps_per = std::max(1, int(std::ceil(span * 2.0)));
    t.first.resize(out_n);
    t.weights.assign(std::size_t(t.taps_per) * out_n, 0.0);
    for (int o = 0; o < out_n; ++o) {
      const double center = (o + 0.5) * scale - 0.5;
      int first = int(std::floor(center - span)) + 1;
      t.first[o] = first;
      double sum = 0.0;
      for (int k = 0; k < t.taps_per; ++k) {
        const double x = (first + k - center) /
                         (down && m == ResampleMethod::kLanczos ? scale : 1.0);
        double w;
        switch (m) {
          case ResampleMethod::kNearest:
            w = (std::fabs(first + k - center) <= 0.5) ? 1.0 : 0.0;
            break;
          case ResampleMethod::kBilinear:
            w = std::max(0.0, 1.0 - std::fabs(first + k - center));
            break;
          case ResampleMethod::kBicubic:
            w = detail::cubic_weight(first + k - center);
            break;
          default:
            w = detail::lanczos3_weight(x);
        }
        t.weights[std::size_t(o) * t.taps_per + k] = w;
        sum += w;
      }
      if (sum != 0.0)
        for (int k = 0; k < t.taps_per; ++k)
          t.weights[std::size_t(o) * t.taps_per + k] /= sum;
      (void)src_n;
    }
    return t;
  };

  const Taps tx = build(out_w, src.width, sx);
  const Taps ty = build(out_h, src.height, sy);

  // Horizontal pass into an intermediate, then vertical.
  Image mid(out_w, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int k = 0; k < tx.taps_per; ++k)
          acc += tx.weights[std::size_t(x) * tx.taps_per + k] *
                 src.at_clamped(tx.first[x] + k, y, c);
        mid.at(x, y, c) = float(acc);
      }
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int k = 0; k < ty.taps_per; ++k)
          acc += ty.weights[std::size_t(y) * ty.taps_per + k] *
                 mid.at_clamped(x, ty.first[y] + k, c);
        dst.at(x, y, c) = float(acc);
      }
  return dst;
}

/// Integer-factor upsampling with the standard separable kernels.
inline Image upsample(const Image& img, int factor, ResampleMethod m) {
  if (factor < 1) throw Error("upsample: factor must be >= 1");
  return resample(img, img.width * factor, img.height * factor, m);
}

/// Exact area-average downsampling by an integer factor (the canonical way LR
/// training images are derived from HR renders).
inline Image downsample_area(const Image& img, int factor) {
  if (factor < 1 || img.width % factor || img.height % factor)
    throw Error("downsample_area: dimensions not divisible by factor");
  Image out(img.width / factor, img.height / factor, img.channels);
  const float inv = 1.0f / float(factor * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        float acc = 0.0f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = acc * inv;
      }
  return out;
}

/// Lanczos-3 downsampling (optional higher-fidelity LR path).
inline Image downsample_lanczos(const Image& img, int factor) {
  if (factor < 1 || img.width % factor || img.height % factor)
    throw Error("downsample_lanczos: dimensions not divisible by factor");
  return resample(img, img.width / factor, img.height / factor,
                  ResampleMethod::kLanczos);
}

// ---------------------------------------------------------------------------
// PNG I/O (8-bit, via libpng).

inline void save_png(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("save_png: only 1- or 3-channel images supported");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw Error("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(std::size_t(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const float v = std::clamp(img.at(x, y, c), 0.0f, 1.0f);
        row[std::size_t(x) * img.channels + c] =
            png_byte(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image load_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw Error("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw Error("png read failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const int c = int(png_get_channels(png, info));
  if (c != 1 && c != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error("load_png: unsupported channel count in " + path);
  }
  Image img(w, h, c);
  std::vector<png_byte> row(std::size_t(w) * c);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at(x, y, ch) = float(row[std::size_t(x) * c + ch]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// ---------------------------------------------------------------------------
// Raw float32 dumps ("GIMG": magic, int32 w/h/c, float32 payload, little endian).

inline void save_raw(const Image& img, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot open for writing: " + path);
  const char magic[4] = {'G', 'I', 'M', 'G'};
  std::int32_t dims[3] = {img.width, img.height, img.channels};
  bool ok = std::fwrite(magic, 1, 4, fp) == 4 &&
            std::fwrite(dims, sizeof(std::int32_t), 3, fp) == 3 &&
            std::fwrite(img.data.data(), sizeof(float), img.data.size(), fp) ==
                img.data.size();
  std::fclose(fp);
  if (!ok) throw Error("write failed: " + path);
}

inline Image load_raw(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw Error("cannot open: " + path);
  char magic[4];
  std::int32_t dims[3];
  if (std::fread(magic, 1, 4, fp) != 4 || std::memcmp(magic, "GIMG", 4) != 0 ||
      std::fread(dims, sizeof(std::int32_t), 3, fp) != 3) {
    std::fclose(fp);
    throw Error(path + ": not a raw image dump");
  }
  Image img(dims[0], dims[1], dims[2]);
  const std::size_t n = img.data.size();
  const bool ok = std::fread(img.data.data(), sizeof(float), n, fp) == n;
  std::fclose(fp);
  if (!ok) throw Error(path + ": truncated raw image payload");
  return img;
}

}  // namespace gsup
