#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rhrn/tensor.hpp"

namespace rhrn {

/// 8-bit grayscale raster (binary PGM, P5).
struct GrayImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t& at(Index y, Index x) { return pixels[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t at(Index y, Index x) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
};

/// 8-bit RGB raster (binary PPM, P6), channels interleaved.
struct RgbImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(Index y, Index x, int c) { return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  std::uint8_t at(Index y, Index x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
};

// Readers accept '#' comments in the header and require maxval 255. Errors
// carry the file name and the byte offset where parsing failed.
GrayImage read_pgm(const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const GrayImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace rhrn
