#pragma once

// Raster containers and file I/O: 8-bit RGB images (PNG), float images, and
// depth maps (PFM, 32-bit little-endian floats).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "mars/errors.hpp"

namespace mars {

// Interleaved 8-bit RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;  // 3 * width * height

  Image() = default;
  Image(int w, int h, uint8_t fill = 0) : width(w), height(h), data(3u * w * h, fill) {}

  uint8_t* px(int x, int y) { return data.data() + 3 * (static_cast<size_t>(y) * width + x); }
  const uint8_t* px(int x, int y) const {
    return data.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
  bool empty() const { return data.empty(); }
};

// Single- or multi-channel float raster.
struct FloatImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Per-pixel metric depth with a validity mask. Invalid pixels are stored as 0
// in PFM files; a pixel is valid iff its stored value is > 0 and finite.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h), values(static_cast<size_t>(w) * h, 0.f),
        valid(static_cast<size_t>(w) * h, 0) {}

  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  bool is_valid(int x, int y) const { return valid[idx(x, y)] != 0; }
  float depth(int x, int y) const { return values[idx(x, y)]; }
  void set(int x, int y, float d) {
    values[idx(x, y)] = d;
    valid[idx(x, y)] = (d > 0.f && std::isfinite(d)) ? 1 : 0;
  }
};

inline double luminance(uint8_t r, uint8_t g, uint8_t b) {
  // Rec. 601 weights.
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

inline FloatImage luminance_image(const Image& img) {
  FloatImage out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const uint8_t* p = img.px(x, y);
      out.at(x, y) = static_cast<float>(luminance(p[0], p[1], p[2]));
    }
  return out;
}

inline FloatImage to_float(const Image& img) {
  FloatImage out(img.width, img.height, 3);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.f;
  return out;
}

inline Image to_u8(const FloatImage& img) {
  if (img.channels != 3) throw NotThreeChannel("to_u8: expected 3 channels");
  Image out(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float v = std::clamp(img.data[i], 0.f, 1.f);
    out.data[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

// Area-average downscale of a single-channel float raster.
inline FloatImage resize_area(const FloatImage& src, int out_w, int out_h) {
  if (src.channels != 1) throw ShapeMismatch("resize_area: single channel only");
  FloatImage out(out_w, out_h, 1);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      const double y0 = oy * sy, y1 = (oy + 1) * sy;
      double sum = 0.0, area = 0.0;
      for (int y = static_cast<int>(y0); y < y1 && y < src.height; ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (int x = static_cast<int>(x0); x < x1 && x < src.width; ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          sum += wx * wy * src.at(x, y);
          area += wx * wy;
        }
      }
      out.at(ox, oy) = static_cast<float>(area > 0 ? sum / area : 0.0);
    }
  }
  return out;
}

// Separable Gaussian blur, reflected borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (double& k : kernel) k /= ksum;

  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };

  std::vector<double> tmp(img.data.size());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i)
          s += kernel[i + radius] * img.px(reflect(x + i, img.width), y)[c];
        tmp[3 * (static_cast<size_t>(y) * img.width + x) + c] = s;
      }
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i)
          s += kernel[i + radius] * tmp[3 * (static_cast<size_t>(reflect(y + i, img.height)) * img.width + x) + c];
        out.px(x, y)[c] = static_cast<uint8_t>(std::clamp(std::lround(s), 0l, 255l));
      }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

inline void write_png(const std::string& path, const Image& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failure writing " + path);
  }
  png_init_io(png, fp);
  // Fixed settings so identical pixels always produce identical bytes.
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + 3 * static_cast<size_t>(y) * img.width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
    std::fclose(fp);
    throw DecodeError("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DecodeError("libpng failure reading " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  Image img(png_get_image_width(png, info), png_get_image_height(png, info));
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.data.data() + 3 * static_cast<size_t>(y) * img.width;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// ---------------------------------------------------------------------------
// PFM: "Pf" (1 channel) or "PF" (3 channels), scale -1.0 (little endian),
// rows stored bottom-to-top per the format convention.

inline void write_pfm(const std::string& path, const FloatImage& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeMismatch("write_pfm: 1 or 3 channels only");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path);
  std::fprintf(fp, "%s\n%d %d\n-1.0\n", img.channels == 1 ? "Pf" : "PF", img.width, img.height);
  for (int y = img.height - 1; y >= 0; --y)
    std::fwrite(img.data.data() + static_cast<size_t>(y) * img.width * img.channels,
                sizeof(float), static_cast<size_t>(img.width) * img.channels, fp);
  std::fclose(fp);
}

inline FloatImage read_pfm(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path);
  char tag[3] = {0};
  int w = 0, h = 0;
  double scale = 0.0;
  if (std::fscanf(fp, "%2s %d %d %lf", tag, &w, &h, &scale) != 4 || w <= 0 || h <= 0) {
    std::fclose(fp);
    throw DecodeError("bad PFM header: " + path);
  }
  std::fgetc(fp);  // single whitespace byte before the raster
  const int channels = std::strcmp(tag, "PF") == 0 ? 3 : 1;
  if (channels == 1 && std::strcmp(tag, "Pf") != 0) {
    std::fclose(fp);
    throw DecodeError("bad PFM tag: " + path);
  }
  FloatImage img(w, h, channels);
  for (int y = h - 1; y >= 0; --y) {
    if (std::fread(img.data.data() + static_cast<size_t>(y) * w * channels, sizeof(float),
                   static_cast<size_t>(w) * channels, fp) != static_cast<size_t>(w) * channels) {
      std::fclose(fp);
      throw DecodeError("truncated PFM: " + path);
    }
  }
  std::fclose(fp);
  if (scale > 0) {  // big-endian file; swap
    for (float& f : img.data) {
      uint32_t u;
      std::memcpy(&u, &f, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
  return img;
}

inline void write_depth_pfm(const std::string& path, const DepthMap& d) {
  FloatImage img(d.width, d.height, 1);
  for (size_t i = 0; i < d.values.size(); ++i) img.data[i] = d.valid[i] ? d.values[i] : 0.f;
  write_pfm(path, img);
}

inline DepthMap read_depth_pfm(const std::string& path) {
  FloatImage img = read_pfm(path);
  if (img.channels != 1) throw DecodeError("depth PFM must be single channel: " + path);
  DepthMap d(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) d.set(x, y, img.at(x, y));
  return d;
}

}  // namespace mars
