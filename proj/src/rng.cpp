#include "rsup/rng.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rsup {

namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& w : s_) w = splitmix64(x);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be > 0");
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::normal() {
  // Box-Muller, one value per draw so the state stays a pure 4-word vector.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Rng Rng::split() {
  uint64_t a = next_u64();
  uint64_t b = next_u64();
  return Rng(a ^ rotl(b, 32));
}

std::string Rng::state() const {
  char buf[4 * 17 + 1];
  std::snprintf(buf, sizeof(buf), "%016llx:%016llx:%016llx:%016llx",
                (unsigned long long)s_[0], (unsigned long long)s_[1],
                (unsigned long long)s_[2], (unsigned long long)s_[3]);
  return buf;
}

Rng Rng::from_state(const std::string& s) {
  Rng r;
  unsigned long long w[4];
  if (std::sscanf(s.c_str(), "%llx:%llx:%llx:%llx", &w[0], &w[1], &w[2],
                  &w[3]) != 4) {
    throw std::runtime_error("Rng::from_state: malformed state string '" + s +
                             "'");
  }
  for (int i = 0; i < 4; ++i) r.s_[i] = w[i];
  return r;
}

}  // namespace rsup
