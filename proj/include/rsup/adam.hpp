#pragma once

#include <cstdint>
#include <vector>

#include "rsup/autodiff.hpp"

namespace rsup {

// Adam over an explicit parameter list. After every step the parameters and
// moments are rounded to the float32 lattice, which is the precision the
// checkpoint format stores; a saved-then-resumed run therefore continues on
// bit-identical state.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }
  const std::vector<Var>& params() const { return params_; }

  // Checkpoint access: moments and step counter, in parameter order.
  std::vector<Tensor>& moments_m() { return m_; }
  std::vector<Tensor>& moments_v() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-5, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
};

}  // namespace rsup
