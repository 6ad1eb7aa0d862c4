#pragma once

#include <string>

#include "rsup/metrics.hpp"
#include "rsup/phantom.hpp"
#include "rsup/trainer.hpp"

namespace rsup {

// Flat dotted-key configuration ("key = value" lines, '#' comments). Every
// key has a default; unknown keys are rejected. serialize() emits the full
// effective configuration, which generate-data/train echo into their run
// directory for provenance.
struct RunConfig {
  // phantom generation
  int phantom_shape = 64;
  int phantom_n_ribs = 6;
  int phantom_count_train = 2;
  int phantom_count_eval = 1;
  int phantom_views = 42;
  uint64_t phantom_seed = 7;
  int detector_size = 64;
  DomainStyle style{1.6, 1.05, 0.02, 0.01, 1.2, 11};
  TrainConfig train;
  LPIPSConfig lpips;

  static RunConfig defaults() { return RunConfig{}; }
  // Defaults overlaid with the file's assignments.
  static RunConfig load(const std::string& path);
  static RunConfig parse(const std::string& text);
  std::string serialize() const;
};

}  // namespace rsup
