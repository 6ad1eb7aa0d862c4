#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace rsup {

// Dense row-major tensor of doubles, rank 1..4. The numeric workhorse for
// the network stack; image data on disk stays float32 (see image.hpp).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor scalar(double value);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  // 2D/3D/4D indexed access (unchecked).
  double& at(int i, int j) { return v_[(size_t)i * shape_[1] + j]; }
  double at(int i, int j) const { return v_[(size_t)i * shape_[1] + j]; }
  double& at(int c, int i, int j) {
    return v_[((size_t)c * shape_[1] + i) * shape_[2] + j];
  }
  double at(int c, int i, int j) const {
    return v_[((size_t)c * shape_[1] + i) * shape_[2] + j];
  }
  double& at(int o, int c, int i, int j) {
    return v_[(((size_t)o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  double at(int o, int c, int i, int j) const {
    return v_[(((size_t)o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(double v);
  double max_abs() const;
  double min_value() const;
  double max_value() const;
  double mean() const;
  bool all_finite() const;

  // Rounds every element to its nearest float32 value. Parameters and
  // optimizer moments live on the float32 lattice so checkpoint blobs
  // (stored as float32) round-trip bit-exactly.
  void quantize_f32();

 private:
  std::vector<int> shape_;
  std::vector<double> v_;
};

int64_t shape_size(const std::vector<int>& shape);

}  // namespace rsup
