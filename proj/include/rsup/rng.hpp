#pragma once

#include <cstdint>
#include <string>

namespace rsup {

// Deterministic xoshiro256++ generator. All randomness in the project goes
// through this class; std:: distributions are avoided because their output
// sequences are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int n);                // [0, n)
  double normal();                       // standard normal (Box-Muller)

  // Derives an independent child stream.
  Rng split();

  // State round-trips as hex text (checkpoint support).
  std::string state() const;
  static Rng from_state(const std::string& s);

 private:
  Rng() = default;
  uint64_t s_[4] = {0, 0, 0, 0};
};

}  // namespace rsup
