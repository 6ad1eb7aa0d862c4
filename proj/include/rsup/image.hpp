#pragma once

#include <cstdint>
#include <vector>

#include "rsup/tensor.hpp"

namespace rsup {

// 2D float32 image, row-major. float32 is the on-disk precision of the
// dataset container, so holding pixels as float keeps save/load bit-exact.
struct Image {
  int h = 0, w = 0;
  std::vector<float> v;

  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), v((size_t)h_ * w_, 0.0f) {}

  float& at(int i, int j) { return v[(size_t)i * w + j]; }
  float at(int i, int j) const { return v[(size_t)i * w + j]; }
  int64_t size() const { return (int64_t)h * w; }
  bool same_shape(const Image& o) const { return h == o.h && w == o.w; }
};

// 3D float32 volume indexed (z, y, x).
struct Volume {
  int nz = 0, ny = 0, nx = 0;
  std::vector<float> v;

  Volume() = default;
  Volume(int nz_, int ny_, int nx_)
      : nz(nz_), ny(ny_), nx(nx_), v((size_t)nz_ * ny_ * nx_, 0.0f) {}

  float& at(int z, int y, int x) { return v[((size_t)z * ny + y) * nx + x]; }
  float at(int z, int y, int x) const {
    return v[((size_t)z * ny + y) * nx + x];
  }
  int64_t size() const { return (int64_t)nz * ny * nx; }
  bool same_shape(const Volume& o) const {
    return nz == o.nz && ny == o.ny && nx == o.nx;
  }
};

// Bilinear resize with half-pixel centers; identity when sizes match.
Image resize_bilinear(const Image& src, int oh, int ow);

// Gaussian blur with sigma in pixels (kernel truncated at 3 sigma);
// sigma <= 0 returns the input unchanged. Borders are replicate-padded.
Image gaussian_blur(const Image& src, double sigma);

// Binary dilation with a Chebyshev (square) structuring element.
Image dilate_chebyshev(const Image& mask, int radius);

Image clip(const Image& src, float lo, float hi);

// Affine map taking [min,max] of `ref` onto [-1,1]; applied to `src`.
// A degenerate range maps everything to `degenerate_value`.
Image normalize_minmax_pm1(const Image& src, const Image& ref,
                           float degenerate_value = -1.0f);

Tensor image_to_tensor(const Image& img);         // (1,H,W) doubles
Image tensor_to_image(const Tensor& t);           // from (H,W) or (1,H,W)
float max_abs_diff(const Image& a, const Image& b);

}  // namespace rsup
