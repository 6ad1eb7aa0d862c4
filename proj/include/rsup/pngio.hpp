#pragma once

#include <string>
#include <vector>

#include "rsup/image.hpp"

namespace rsup {

// Grayscale PNG of bit depth 8 or 16; samples stored widened to uint16.
struct PngImage {
  int h = 0, w = 0;
  int bit_depth = 8;
  std::vector<uint16_t> v;
};

PngImage read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const PngImage& img);

// [0, 2^depth - 1] <-> [-1, 1]
Image png_to_pm1(const PngImage& png);
PngImage pm1_to_png(const Image& img, int bit_depth);

}  // namespace rsup
