#pragma once

#include <string>
#include <vector>

#include "rsup/phantom.hpp"

namespace rsup {

// On-disk container: one directory per sample. Each array is a raw
// float32 little-endian block; a header.txt per sample lists
// `array <name> <h> <w> float32 <file>` plus scalar metadata lines.
struct Dataset {
  std::vector<DrrSample> drr;
  std::vector<PseudoCxrSample> cxr;
};

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// Raw-block helpers shared with the suppress outputs.
void write_raw_f32(const std::string& path, const Image& img);
Image read_raw_f32(const std::string& path, int h, int w);

}  // namespace rsup
