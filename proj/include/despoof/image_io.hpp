#pragma once

#include <cstdint>
#include <string>

#include "despoof/tensor.hpp"

namespace despoof {

/// [-1, 1] -> [0, 255], round half away from zero, clamped.
std::uint8_t to_byte_signed(float v);
/// [0, 1] -> [0, 255], same rounding.
std::uint8_t to_byte_unit(float v);

/// Writes an RGB [3,H,W] image with values in [-1, 1] as 8-bit PNG.
void write_png_rgb(const std::string& path, const TensorF& image);
/// Writes a [1,H,W] map with values in [0, 1] as 8-bit grayscale PNG.
void write_png_gray(const std::string& path, const TensorF& map);

/// Reads an 8-bit RGB PNG into [3,H,W] with values in [-1, 1].
TensorF read_png_rgb(const std::string& path);
/// Reads an 8-bit grayscale PNG into [1,H,W] with values in [0, 1].
TensorF read_png_gray(const std::string& path);

/// Value the PNG round trip produces for v in [-1, 1].
inline float quantize_signed(float v) { return static_cast<float>(to_byte_signed(v)) / 255.0f * 2.0f - 1.0f; }

}  // namespace despoof
