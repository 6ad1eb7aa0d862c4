#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rsup/nets.hpp"

namespace rsup {

// Single-file archive: a text header (NetConfig, free-form metadata, the
// tensor directory) followed by the raw float32 little-endian blobs in
// directory order. Parameters live on the float32 lattice in memory, so the
// round-trip is bit-exact.
struct CheckpointData {
  NetConfig cfg;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find_tensor(const std::string& name) const;
  // Throws with the differing field names when `expected` does not match.
  void require_compatible(const NetConfig& expected) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace rsup
