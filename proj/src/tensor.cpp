#include "rsup/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rsup {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4)
    throw std::invalid_argument("Tensor: rank must be 1..4");
  v_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t(std::vector<int>{1});
  t[0] = value;
  return t;
}

void Tensor::fill(double v) {
  for (auto& x : v_) x = v;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : v_) m = std::max(m, std::fabs(x));
  return m;
}

double Tensor::min_value() const {
  double m = std::numeric_limits<double>::infinity();
  for (double x : v_) m = std::min(m, x);
  return m;
}

double Tensor::max_value() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v_) m = std::max(m, x);
  return m;
}

double Tensor::mean() const {
  if (v_.empty()) return 0.0;
  double s = 0.0;
  for (double x : v_) s += x;
  return s / static_cast<double>(v_.size());
}

bool Tensor::all_finite() const {
  for (double x : v_)
    if (!std::isfinite(x)) return false;
  return true;
}

void Tensor::quantize_f32() {
  for (auto& x : v_) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace rsup
