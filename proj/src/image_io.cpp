#include "despoof/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace despoof {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return f;
}

void write_png(const std::string& path, std::size_t width, std::size_t height, int color_type, int channels,
               const std::vector<std::uint8_t>& pixels) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  std::size_t width = 0, height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

Decoded read_png(const std::string& path, int want_color_type) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed reading PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  Decoded d;
  d.width = png_get_image_width(png, info);
  d.height = png_get_image_height(png, info);
  const int ct = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth != 8 || ct != want_color_type) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("'" + path + "' is not an 8-bit PNG of the expected color type");
  }
  d.channels = want_color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  d.pixels.resize(d.width * d.height * d.channels);
  for (std::size_t y = 0; y < d.height; ++y) png_read_row(png, d.pixels.data() + y * d.width * d.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

std::uint8_t to_byte_signed(float v) {
  const double scaled = (static_cast<double>(std::clamp(v, -1.0f, 1.0f)) + 1.0) * 0.5 * 255.0;
  return static_cast<std::uint8_t>(std::clamp(std::round(scaled), 0.0, 255.0));
}

std::uint8_t to_byte_unit(float v) {
  const double scaled = static_cast<double>(std::clamp(v, 0.0f, 1.0f)) * 255.0;
  return static_cast<std::uint8_t>(std::clamp(std::round(scaled), 0.0, 255.0));
}

void write_png_rgb(const std::string& path, const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw std::invalid_argument("write_png_rgb: expected [3,H,W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> px(h * w * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) px[i * 3 + c] = to_byte_signed(image[c * h * w + i]);
  }
  write_png(path, w, h, PNG_COLOR_TYPE_RGB, 3, px);
}

void write_png_gray(const std::string& path, const TensorF& map) {
  if (map.rank() != 3 || map.dim(0) != 1) throw std::invalid_argument("write_png_gray: expected [1,H,W]");
  const std::size_t h = map.dim(1), w = map.dim(2);
  std::vector<std::uint8_t> px(h * w);
  for (std::size_t i = 0; i < h * w; ++i) px[i] = to_byte_unit(map[i]);
  write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 1, px);
}

TensorF read_png_rgb(const std::string& path) {
  auto d = read_png(path, PNG_COLOR_TYPE_RGB);
  TensorF out(Shape{3, d.height, d.width});
  const std::size_t hw = d.height * d.width;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = static_cast<float>(d.pixels[i * 3 + c]) / 255.0f * 2.0f - 1.0f;
  }
  return out;
}

TensorF read_png_gray(const std::string& path) {
  auto d = read_png(path, PNG_COLOR_TYPE_GRAY);
  TensorF out(Shape{1, d.height, d.width});
  for (std::size_t i = 0; i < d.pixels.size(); ++i) out[i] = static_cast<float>(d.pixels[i]) / 255.0f;
  return out;
}

}  // namespace despoof
