#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rsup/autodiff.hpp"
#include "rsup/image.hpp"
#include "rsup/rng.hpp"

namespace rsup::test {

inline Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
  return t;
}

inline Image random_image(int h, int w, Rng& rng, float lo = -1.f,
                          float hi = 1.f) {
  Image img(h, w);
  for (auto& v : img.v) v = (float)rng.uniform(lo, hi);
  return img;
}

// Worst relative error between the analytic gradient and central finite
// differences over `probes` random parameter entries.
inline double gradcheck(const std::function<Var()>& build,
                        const std::vector<Var>& params, Rng& rng,
                        int probes = 6, double h_rel = 1e-5) {
  Var loss = build();
  for (const auto& p : params)
    if (!p->grad.empty()) p->grad.fill(0.0);
  backward(loss);
  double worst = 0.0;
  for (int t = 0; t < probes; ++t) {
    const Var& p = params[rng.uniform_int((int)params.size())];
    const int64_t idx = rng.uniform_int((int)p->value.size());
    const double analytic = p->grad.empty() ? 0.0 : p->grad[idx];
    const double h = h_rel * std::max(1.0, std::fabs(p->value[idx]));
    const double orig = p->value[idx];
    p->value[idx] = orig + h;
    const double lp = build()->value[0];
    p->value[idx] = orig - h;
    const double lm = build()->value[0];
    p->value[idx] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel = std::fabs(analytic - fd) /
                       std::max({1e-6, std::fabs(analytic), std::fabs(fd)});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace rsup::test
