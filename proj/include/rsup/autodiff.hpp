#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rsup/tensor.hpp"

namespace rsup {

// Tape-free reverse-mode autodiff over Tensor values. Each op returns a new
// node holding its value, its parents, and a closure that scatters the
// node's gradient into the parents. backward() runs the closures in reverse
// topological order.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

Var make_const(Tensor value);  // requires_grad = false
Var make_param(Tensor value);  // requires_grad = true

// Seeds grad(root) = 1 (root must be scalar) and accumulates gradients into
// every ancestor with requires_grad set.
void backward(const Var& root);

// --- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var abs_v(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var tanh_v(const Var& a);
Var sigmoid_v(const Var& a);

// Multiplies by a constant mask; mask shape must equal a's or be a single
// (1,H,W)/(H,W) plane broadcast across a's channels.
Var mul_mask(const Var& a, const Tensor& mask);

// --- reductions -------------------------------------------------------------
Var mean_all(const Var& a);
Var sum_all(const Var& a);

// --- neural ops --------------------------------------------------------------
// x: (C,H,W), w: (O,C,kh,kw), b: (O) or nullptr.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x: (N), w: (out,in), b: (out) or nullptr.
Var linear(const Var& x, const Var& w, const Var& b);
// (C,H,W) -> (C): mean over spatial positions.
Var global_avg_pool(const Var& x);
// Per-channel normalization over spatial extent, with affine gamma/beta (C).
Var instance_norm(const Var& x, const Var& gamma, const Var& beta,
                  double eps = 1e-5);
// (C,H,W) -> (C,2H,2W), bilinear, half-pixel centers.
Var upsample2(const Var& x);

// Style modulation: w (O,C,kh,kw) scaled per input channel by s (C).
Var scale_in_channels(const Var& w, const Var& s);
// Weight demodulation: rescales each output channel of w to unit L2 norm,
// eps inside the square root.
Var demod_out(const Var& w, double eps = 1e-8);

// --- image-derivative ops ----------------------------------------------------
// Central differences with replicate-padded borders. (1,H,W) -> (2,H,W);
// channel 0 is the row (vertical) derivative, channel 1 the column one.
Var grad_map(const Var& x);
// 5-point stencil [0,1,0;1,-4,1;0,1,0], replicate-padded. (1,H,W) -> (1,H,W).
Var laplacian_map(const Var& x);

// Value captured, gradient blocked.
Var detach(const Var& a);

// mean((a - target)^2): the least-squares GAN building block.
Var mse_to(const Var& a, double target);

}  // namespace rsup
