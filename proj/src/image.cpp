#include "rsup/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rsup {

Image resize_bilinear(const Image& src, int oh, int ow) {
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("resize_bilinear: bad target size");
  if (oh == src.h && ow == src.w) return src;
  Image out(oh, ow);
  const double sy = (double)src.h / oh, sx = (double)src.w / ow;
  for (int i = 0; i < oh; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    int y0 = (int)std::floor(fy);
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.h - 1);
    int y1c = std::clamp(y0 + 1, 0, src.h - 1);
    for (int j = 0; j < ow; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      int x0 = (int)std::floor(fx);
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.w - 1);
      int x1c = std::clamp(x0 + 1, 0, src.w - 1);
      out.at(i, j) = (float)((1 - wy) * ((1 - wx) * src.at(y0c, x0c) +
                                         wx * src.at(y0c, x1c)) +
                             wy * ((1 - wx) * src.at(y1c, x0c) +
                                   wx * src.at(y1c, x1c)));
    }
  }
  return out;
}

Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int r = std::max(1, (int)std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (auto& x : k) x /= sum;

  Image tmp(src.h, src.w), out(src.h, src.w);
  for (int i = 0; i < src.h; ++i)
    for (int j = 0; j < src.w; ++j) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d)
        s += k[d + r] * src.at(i, std::clamp(j + d, 0, src.w - 1));
      tmp.at(i, j) = (float)s;
    }
  for (int i = 0; i < src.h; ++i)
    for (int j = 0; j < src.w; ++j) {
      double s = 0.0;
      for (int d = -r; d <= r; ++d)
        s += k[d + r] * tmp.at(std::clamp(i + d, 0, src.h - 1), j);
      out.at(i, j) = (float)s;
    }
  return out;
}

Image dilate_chebyshev(const Image& mask, int radius) {
  Image out(mask.h, mask.w);
  for (int i = 0; i < mask.h; ++i)
    for (int j = 0; j < mask.w; ++j) {
      float v = 0.0f;
      for (int di = -radius; di <= radius && v == 0.0f; ++di) {
        const int ii = i + di;
        if (ii < 0 || ii >= mask.h) continue;
        for (int dj = -radius; dj <= radius; ++dj) {
          const int jj = j + dj;
          if (jj < 0 || jj >= mask.w) continue;
          if (mask.at(ii, jj) > 0.5f) {
            v = 1.0f;
            break;
          }
        }
      }
      out.at(i, j) = v;
    }
  return out;
}

Image clip(const Image& src, float lo, float hi) {
  Image out = src;
  for (auto& x : out.v) x = std::clamp(x, lo, hi);
  return out;
}

Image normalize_minmax_pm1(const Image& src, const Image& ref,
                           float degenerate_value) {
  float mn = ref.v[0], mx = ref.v[0];
  for (float x : ref.v) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  Image out(src.h, src.w);
  if (mx - mn < 1e-12f) {
    for (auto& x : out.v) x = degenerate_value;
    return out;
  }
  const float a = 2.0f / (mx - mn);
  const float b = -1.0f - a * mn;
  // the affine can overshoot [-1,1] by one ulp; pin it
  for (int64_t i = 0; i < src.size(); ++i)
    out.v[i] = std::clamp(a * src.v[i] + b, -1.0f, 1.0f);
  return out;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({1, img.h, img.w});
  for (int64_t i = 0; i < img.size(); ++i) t[i] = img.v[i];
  return t;
}

Image tensor_to_image(const Tensor& t) {
  int h, w;
  if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw std::invalid_argument("tensor_to_image: need (H,W) or (1,H,W)");
  }
  Image img(h, w);
  for (int64_t i = 0; i < img.size(); ++i) img.v[i] = (float)t[i];
  return img;
}

float max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  float m = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace rsup
