#include "rsup/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace rsup {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Var unary(const Var& a, Tensor value, std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = {a};
  n->requires_grad = a->requires_grad;
  if (n->requires_grad) n->backward_fn = std::move(bwd);
  return n;
}

Var binary(const Var& a, const Var& b, Tensor value,
           std::function<void(Node&)> bwd) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = {a, b};
  n->requires_grad = a->requires_grad || b->requires_grad;
  if (n->requires_grad) n->backward_fn = std::move(bwd);
  return n;
}

// im2col for (C,H,W) with zero padding; cols is (C*kh*kw, OH*OW) row-major.
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh,
            int ow, MatRM& cols) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  cols.setZero(c * kh * kw, oh * ow);
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (ci * kh + ki) * kw + kj;
        double* dst = cols.data() + (size_t)row * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          const double* src = x.data() + ((size_t)ci * h + ii) * w;
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < w) dst[oi * ow + oj] = src[jj];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols back into gx.
void col2im_add(const MatRM& cols, int kh, int kw, int stride, int pad, int oh,
                int ow, Tensor& gx) {
  const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  for (int ci = 0; ci < c; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (ci * kh + ki) * kw + kj;
        const double* src = cols.data() + (size_t)row * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          double* dst = gx.data() + ((size_t)ci * h + ii) * w;
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < w) dst[jj] += src[oi * ow + oj];
          }
        }
      }
    }
  }
}

struct Lerp {
  int i0, i1;
  double w0, w1;
};

// Half-pixel-center source coordinates for a x2 bilinear upsample.
std::vector<Lerp> up2_taps(int n_out, int n_in) {
  std::vector<Lerp> taps(n_out);
  for (int i = 0; i < n_out; ++i) {
    double s = 0.5 * i - 0.25;
    int i0 = (int)std::floor(s);
    double f = s - i0;
    taps[i].i0 = std::min(std::max(i0, 0), n_in - 1);
    taps[i].i1 = std::min(std::max(i0 + 1, 0), n_in - 1);
    taps[i].w0 = 1.0 - f;
    taps[i].w1 = f;
  }
  return taps;
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

Var make_param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  // Iterative post-order DFS to get a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// --- elementwise -------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return binary(a, b, std::move(out), [](Node& n) {
    for (int k = 0; k < 2; ++k) {
      Node* p = n.parents[k].get();
      if (!p->requires_grad) continue;
      Tensor& g = p->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return binary(a, b, std::move(out), [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return binary(a, b, std::move(out), [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] /= b->value[i];
  return binary(a, b, std::move(out), [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i)
        g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += s;
  return unary(a, std::move(out), [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var mul_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return unary(a, std::move(out), [s](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

Var abs_v(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  return unary(a, std::move(out), [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
  });
}

Var square(const Var& a) { return mul(a, a); }

Var relu(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
  return unary(a, std::move(out), [](Node& n) {
    const Tensor& x = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      if (x[i] > 0) g[i] += n.grad[i];
  });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i)
    if (out[i] < 0) out[i] *= slope;
  return unary(a, std::move(out), [slope](Node& n) {
    const Tensor& x = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * (x[i] > 0 ? 1.0 : slope);
  });
}

Var tanh_v(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  Tensor saved = out;
  return unary(a, std::move(out), [saved](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * (1.0 - saved[i] * saved[i]);
  });
}

Var sigmoid_v(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor saved = out;
  return unary(a, std::move(out), [saved](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Var mul_mask(const Var& a, const Tensor& mask) {
  const Tensor& x = a->value;
  bool broadcast;
  if (mask.same_shape(x)) {
    broadcast = false;
  } else {
    const int hr = mask.rank() == 3 ? mask.dim(1) : mask.dim(0);
    const int wr = mask.rank() == 3 ? mask.dim(2) : mask.dim(1);
    if (x.rank() != 3 || hr != x.dim(1) || wr != x.dim(2) ||
        (mask.rank() == 3 && mask.dim(0) != 1))
      throw std::invalid_argument("mul_mask: incompatible mask shape");
    broadcast = true;
  }
  const int64_t plane = broadcast ? (int64_t)x.dim(1) * x.dim(2) : 0;
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] *= mask[broadcast ? i % plane : i];
  Tensor m = mask;
  return unary(a, std::move(out), [m, broadcast, plane](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * m[broadcast ? i % plane : i];
  });
}

// --- reductions ----------------------------------------------------------------

Var mean_all(const Var& a) {
  const int64_t n = a->value.size();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a->value[i];
  return unary(a, Tensor::scalar(s / (double)n), [n](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    const double gs = nd.grad[0] / (double)n;
    for (int64_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return unary(a, Tensor::scalar(s), [](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    const double gs = nd.grad[0];
    for (int64_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

// --- neural ops ------------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.rank() != 3 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: x must be (C,H,W), w (O,C,kh,kw)");
  if (xv.dim(0) != wv.dim(1))
    throw std::invalid_argument("conv2d: channel mismatch");
  const int o = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int h = xv.dim(1), wd = xv.dim(2);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: input too small");

  MatRM cols;
  im2col(xv, kh, kw, stride, pad, oh, ow, cols);
  Tensor out({o, oh, ow});
  {
    CMapRM wm(wv.data(), o, wv.size() / o);
    MapRM ym(out.data(), o, (int64_t)oh * ow);
    ym.noalias() = wm * cols;
  }
  if (b) {
    if (b->value.size() != o) throw std::invalid_argument("conv2d: bad bias");
    for (int oc = 0; oc < o; ++oc) {
      double bias = b->value[oc];
      double* row = out.data() + (size_t)oc * oh * ow;
      for (int64_t i = 0; i < (int64_t)oh * ow; ++i) row[i] += bias;
    }
  }

  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  node->parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  node->requires_grad = x->requires_grad || w->requires_grad ||
                        (b && b->requires_grad);
  if (node->requires_grad) {
    node->backward_fn = [stride, pad, o, kh, kw, oh, ow](Node& n) {
      Node* xp = n.parents[0].get();
      Node* wp = n.parents[1].get();
      Node* bp = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
      CMapRM gy(n.grad.data(), o, (int64_t)oh * ow);
      MatRM cols;  // recomputed: cheaper than holding it across the tape
      if (xp->requires_grad || wp->requires_grad)
        im2col(xp->value, kh, kw, stride, pad, oh, ow, cols);
      if (wp->requires_grad) {
        Tensor& gw = wp->ensure_grad();
        MapRM gwm(gw.data(), o, gw.size() / o);
        gwm.noalias() += gy * cols.transpose();
      }
      if (xp->requires_grad) {
        const Tensor& wv = wp->value;
        CMapRM wm(wv.data(), o, wv.size() / o);
        MatRM gcols = wm.transpose() * gy;
        col2im_add(gcols, kh, kw, stride, pad, oh, ow, xp->ensure_grad());
      }
      if (bp && bp->requires_grad) {
        Tensor& gb = bp->ensure_grad();
        for (int oc = 0; oc < o; ++oc) {
          const double* row = n.grad.data() + (size_t)oc * oh * ow;
          double s = 0.0;
          for (int64_t i = 0; i < (int64_t)oh * ow; ++i) s += row[i];
          gb[oc] += s;
        }
      }
    };
  }
  return node;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (wv.rank() != 2 || xv.size() != wv.dim(1))
    throw std::invalid_argument("linear: shape mismatch");
  const int out_n = wv.dim(0), in_n = wv.dim(1);
  Tensor out({out_n});
  for (int i = 0; i < out_n; ++i) {
    const double* row = wv.data() + (size_t)i * in_n;
    double s = b ? b->value[i] : 0.0;
    for (int j = 0; j < in_n; ++j) s += row[j] * xv[j];
    out[i] = s;
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  node->parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  node->requires_grad =
      x->requires_grad || w->requires_grad || (b && b->requires_grad);
  if (node->requires_grad) {
    node->backward_fn = [out_n, in_n](Node& n) {
      Node* xp = n.parents[0].get();
      Node* wp = n.parents[1].get();
      Node* bp = n.parents.size() > 2 ? n.parents[2].get() : nullptr;
      if (xp->requires_grad) {
        Tensor& gx = xp->ensure_grad();
        for (int i = 0; i < out_n; ++i) {
          const double* row = wp->value.data() + (size_t)i * in_n;
          const double g = n.grad[i];
          for (int j = 0; j < in_n; ++j) gx[j] += g * row[j];
        }
      }
      if (wp->requires_grad) {
        Tensor& gw = wp->ensure_grad();
        for (int i = 0; i < out_n; ++i) {
          double* row = gw.data() + (size_t)i * in_n;
          const double g = n.grad[i];
          for (int j = 0; j < in_n; ++j) row[j] += g * xp->value[j];
        }
      }
      if (bp && bp->requires_grad) {
        Tensor& gb = bp->ensure_grad();
        for (int i = 0; i < out_n; ++i) gb[i] += n.grad[i];
      }
    };
  }
  return node;
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("global_avg_pool: need (C,H,W)");
  const int c = xv.dim(0);
  const int64_t hw = (int64_t)xv.dim(1) * xv.dim(2);
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    const double* p = xv.data() + ci * hw;
    double s = 0.0;
    for (int64_t i = 0; i < hw; ++i) s += p[i];
    out[ci] = s / (double)hw;
  }
  return unary(x, std::move(out), [c, hw](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      const double gs = n.grad[ci] / (double)hw;
      double* p = g.data() + ci * hw;
      for (int64_t i = 0; i < hw; ++i) p[i] += gs;
    }
  });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("instance_norm: need (C,H,W)");
  const int c = xv.dim(0);
  const int64_t hw = (int64_t)xv.dim(1) * xv.dim(2);
  if (gamma->value.size() != c || beta->value.size() != c)
    throw std::invalid_argument("instance_norm: affine size mismatch");

  Tensor xhat(xv.shape());
  Tensor istd({c});
  Tensor out(xv.shape());
  for (int ci = 0; ci < c; ++ci) {
    const double* p = xv.data() + ci * hw;
    double mu = 0.0;
    for (int64_t i = 0; i < hw; ++i) mu += p[i];
    mu /= (double)hw;
    double var = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = p[i] - mu;
      var += d * d;
    }
    var /= (double)hw;
    const double is = 1.0 / std::sqrt(var + eps);
    istd[ci] = is;
    double* xh = xhat.data() + ci * hw;
    double* o = out.data() + ci * hw;
    const double g = gamma->value[ci], bta = beta->value[ci];
    for (int64_t i = 0; i < hw; ++i) {
      xh[i] = (p[i] - mu) * is;
      o[i] = g * xh[i] + bta;
    }
  }

  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  node->parents = {x, gamma, beta};
  node->requires_grad =
      x->requires_grad || gamma->requires_grad || beta->requires_grad;
  if (node->requires_grad) {
    node->backward_fn = [c, hw, xhat, istd](Node& n) {
      Node* xp = n.parents[0].get();
      Node* gp = n.parents[1].get();
      Node* bp = n.parents[2].get();
      for (int ci = 0; ci < c; ++ci) {
        const double* gy = n.grad.data() + ci * hw;
        const double* xh = xhat.data() + ci * hw;
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (int64_t i = 0; i < hw; ++i) {
          sum_gy += gy[i];
          sum_gy_xh += gy[i] * xh[i];
        }
        if (gp->requires_grad) gp->ensure_grad()[ci] += sum_gy_xh;
        if (bp->requires_grad) bp->ensure_grad()[ci] += sum_gy;
        if (xp->requires_grad) {
          Tensor& gx = xp->ensure_grad();
          double* gxp = gx.data() + ci * hw;
          const double scale = gp->value[ci] * istd[ci];
          const double mg = sum_gy / (double)hw;
          const double mgx = sum_gy_xh / (double)hw;
          for (int64_t i = 0; i < hw; ++i)
            gxp[i] += scale * (gy[i] - mg - xh[i] * mgx);
        }
      }
    };
  }
  return node;
}

Var upsample2(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3) throw std::invalid_argument("upsample2: need (C,H,W)");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int oh = 2 * h, ow = 2 * w;
  auto rt = up2_taps(oh, h), ct = up2_taps(ow, w);
  Tensor out({c, oh, ow});
  for (int ci = 0; ci < c; ++ci) {
    const double* src = xv.data() + (size_t)ci * h * w;
    double* dst = out.data() + (size_t)ci * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const Lerp& r = rt[i];
      for (int j = 0; j < ow; ++j) {
        const Lerp& cl = ct[j];
        dst[(size_t)i * ow + j] =
            r.w0 * (cl.w0 * src[(size_t)r.i0 * w + cl.i0] +
                    cl.w1 * src[(size_t)r.i0 * w + cl.i1]) +
            r.w1 * (cl.w0 * src[(size_t)r.i1 * w + cl.i0] +
                    cl.w1 * src[(size_t)r.i1 * w + cl.i1]);
      }
    }
  }
  return unary(x, std::move(out), [c, h, w, oh, ow, rt, ct](Node& n) {
    Tensor& gx = n.parents[0]->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      const double* gy = n.grad.data() + (size_t)ci * oh * ow;
      double* gxp = gx.data() + (size_t)ci * h * w;
      for (int i = 0; i < oh; ++i) {
        const Lerp& r = rt[i];
        for (int j = 0; j < ow; ++j) {
          const Lerp& cl = ct[j];
          const double g = gy[(size_t)i * ow + j];
          gxp[(size_t)r.i0 * w + cl.i0] += g * r.w0 * cl.w0;
          gxp[(size_t)r.i0 * w + cl.i1] += g * r.w0 * cl.w1;
          gxp[(size_t)r.i1 * w + cl.i0] += g * r.w1 * cl.w0;
          gxp[(size_t)r.i1 * w + cl.i1] += g * r.w1 * cl.w1;
        }
      }
    }
  });
}

Var scale_in_channels(const Var& w, const Var& s) {
  const Tensor& wv = w->value;
  if (wv.rank() != 4 || s->value.size() != wv.dim(1))
    throw std::invalid_argument("scale_in_channels: shape mismatch");
  const int o = wv.dim(0), c = wv.dim(1);
  const int64_t kk = (int64_t)wv.dim(2) * wv.dim(3);
  Tensor out = wv;
  for (int oc = 0; oc < o; ++oc)
    for (int ci = 0; ci < c; ++ci) {
      double* p = out.data() + ((size_t)oc * c + ci) * kk;
      const double sc = s->value[ci];
      for (int64_t k = 0; k < kk; ++k) p[k] *= sc;
    }
  return binary(w, s, std::move(out), [o, c, kk](Node& n) {
    Node* wp = n.parents[0].get();
    Node* sp = n.parents[1].get();
    for (int oc = 0; oc < o; ++oc)
      for (int ci = 0; ci < c; ++ci) {
        const double* gy = n.grad.data() + ((size_t)oc * c + ci) * kk;
        const double* wvp = wp->value.data() + ((size_t)oc * c + ci) * kk;
        if (wp->requires_grad) {
          double* gw = wp->ensure_grad().data() + ((size_t)oc * c + ci) * kk;
          const double sc = sp->value[ci];
          for (int64_t k = 0; k < kk; ++k) gw[k] += gy[k] * sc;
        }
        if (sp->requires_grad) {
          double acc = 0.0;
          for (int64_t k = 0; k < kk; ++k) acc += gy[k] * wvp[k];
          sp->ensure_grad()[ci] += acc;
        }
      }
  });
}

Var demod_out(const Var& w, double eps) {
  const Tensor& wv = w->value;
  if (wv.rank() != 4) throw std::invalid_argument("demod_out: need (O,C,kh,kw)");
  const int o = wv.dim(0);
  const int64_t m = wv.size() / o;  // weights per output channel
  Tensor d({o});
  Tensor out = wv;
  for (int oc = 0; oc < o; ++oc) {
    const double* p = wv.data() + oc * m;
    double n2 = eps;
    for (int64_t k = 0; k < m; ++k) n2 += p[k] * p[k];
    const double dv = 1.0 / std::sqrt(n2);
    d[oc] = dv;
    double* op = out.data() + oc * m;
    for (int64_t k = 0; k < m; ++k) op[k] *= dv;
  }
  return unary(w, std::move(out), [o, m, d](Node& n) {
    Node* wp = n.parents[0].get();
    Tensor& gw = wp->ensure_grad();
    for (int oc = 0; oc < o; ++oc) {
      const double* gy = n.grad.data() + oc * m;
      const double* wvp = wp->value.data() + oc * m;
      double dot = 0.0;
      for (int64_t k = 0; k < m; ++k) dot += gy[k] * wvp[k];
      const double dv = d[oc];
      const double d3dot = dv * dv * dv * dot;
      double* gwp = gw.data() + oc * m;
      for (int64_t k = 0; k < m; ++k) gwp[k] += gy[k] * dv - wvp[k] * d3dot;
    }
  });
}

// --- image-derivative ops ------------------------------------------------------

Var grad_map(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3 || xv.dim(0) != 1)
    throw std::invalid_argument("grad_map: need (1,H,W)");
  const int h = xv.dim(1), w = xv.dim(2);
  if (h < 3 || w < 3) throw std::invalid_argument("grad_map: image too small");
  Tensor out({2, h, w});
  for (int i = 0; i < h; ++i) {
    const int iu = std::max(i - 1, 0), id = std::min(i + 1, h - 1);
    for (int j = 0; j < w; ++j) {
      const int jl = std::max(j - 1, 0), jr = std::min(j + 1, w - 1);
      out.at(0, i, j) = 0.5 * (xv.at(0, id, j) - xv.at(0, iu, j));
      out.at(1, i, j) = 0.5 * (xv.at(0, i, jr) - xv.at(0, i, jl));
    }
  }
  return unary(x, std::move(out), [h, w](Node& n) {
    Tensor& gx = n.parents[0]->ensure_grad();
    for (int i = 0; i < h; ++i) {
      const int iu = std::max(i - 1, 0), id = std::min(i + 1, h - 1);
      for (int j = 0; j < w; ++j) {
        const int jl = std::max(j - 1, 0), jr = std::min(j + 1, w - 1);
        gx.at(0, id, j) += 0.5 * n.grad.at(0, i, j);
        gx.at(0, iu, j) -= 0.5 * n.grad.at(0, i, j);
        gx.at(0, i, jr) += 0.5 * n.grad.at(1, i, j);
        gx.at(0, i, jl) -= 0.5 * n.grad.at(1, i, j);
      }
    }
  });
}

Var laplacian_map(const Var& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3 || xv.dim(0) != 1)
    throw std::invalid_argument("laplacian_map: need (1,H,W)");
  const int h = xv.dim(1), w = xv.dim(2);
  if (h < 3 || w < 3)
    throw std::invalid_argument("laplacian_map: image too small");
  Tensor out({1, h, w});
  for (int i = 0; i < h; ++i) {
    const int iu = std::max(i - 1, 0), id = std::min(i + 1, h - 1);
    for (int j = 0; j < w; ++j) {
      const int jl = std::max(j - 1, 0), jr = std::min(j + 1, w - 1);
      out.at(0, i, j) = xv.at(0, iu, j) + xv.at(0, id, j) + xv.at(0, i, jl) +
                        xv.at(0, i, jr) - 4.0 * xv.at(0, i, j);
    }
  }
  return unary(x, std::move(out), [h, w](Node& n) {
    Tensor& gx = n.parents[0]->ensure_grad();
    for (int i = 0; i < h; ++i) {
      const int iu = std::max(i - 1, 0), id = std::min(i + 1, h - 1);
      for (int j = 0; j < w; ++j) {
        const int jl = std::max(j - 1, 0), jr = std::min(j + 1, w - 1);
        const double g = n.grad.at(0, i, j);
        gx.at(0, iu, j) += g;
        gx.at(0, id, j) += g;
        gx.at(0, i, jl) += g;
        gx.at(0, i, jr) += g;
        gx.at(0, i, j) -= 4.0 * g;
      }
    }
  });
}

Var detach(const Var& a) { return make_const(a->value); }

Var mse_to(const Var& a, double target) {
  return mean_all(square(add_scalar(a, -target)));
}

}  // namespace rsup
