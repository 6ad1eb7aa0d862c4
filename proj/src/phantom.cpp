#include "rsup/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rsup/rng.hpp"

namespace rsup {

namespace {

struct Ellipsoid {
  double cz, cy, cx;  // center, voxel units
  double rz, ry, rx;  // semi-axes
  bool contains(double z, double y, double x, double margin = 0.0) const {
    const double dz = (z - cz) / (rz + margin);
    const double dy = (y - cy) / (ry + margin);
    const double dx = (x - cx) / (rx + margin);
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

void stamp_sphere(Volume& vol, Volume& mask, const Volume& exclude,
                  double cz, double cy, double cx, double r, float value) {
  const int z0 = std::max(0, (int)std::floor(cz - r));
  const int z1 = std::min(vol.nz - 1, (int)std::ceil(cz + r));
  const int y0 = std::max(0, (int)std::floor(cy - r));
  const int y1 = std::min(vol.ny - 1, (int)std::ceil(cy + r));
  const int x0 = std::max(0, (int)std::floor(cx - r));
  const int x1 = std::min(vol.nx - 1, (int)std::ceil(cx + r));
  const double r2 = r * r;
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (z - cz) * (z - cz) + (y - cy) * (y - cy) +
                          (x - cx) * (x - cx);
        if (d2 > r2) continue;
        if (exclude.at(z, y, x) > 0.5f) continue;  // keep ribs out of lungs
        vol.at(z, y, x) = value;
        mask.at(z, y, x) = 1.0f;
      }
}

float trilinear(const Volume& v, double z, double y, double x) {
  // zero outside the grid
  if (z < 0 || y < 0 || x < 0 || z > v.nz - 1 || y > v.ny - 1 || x > v.nx - 1)
    return 0.0f;
  const int z0 = std::min((int)z, v.nz - 1), y0 = std::min((int)y, v.ny - 1),
            x0 = std::min((int)x, v.nx - 1);
  const int z1 = std::min(z0 + 1, v.nz - 1), y1 = std::min(y0 + 1, v.ny - 1),
            x1 = std::min(x0 + 1, v.nx - 1);
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  const double c00 = v.at(z0, y0, x0) * (1 - fx) + v.at(z0, y0, x1) * fx;
  const double c01 = v.at(z0, y1, x0) * (1 - fx) + v.at(z0, y1, x1) * fx;
  const double c10 = v.at(z1, y0, x0) * (1 - fx) + v.at(z1, y0, x1) * fx;
  const double c11 = v.at(z1, y1, x0) * (1 - fx) + v.at(z1, y1, x1) * fx;
  const double c0 = c00 * (1 - fy) + c01 * fy;
  const double c1 = c10 * (1 - fy) + c11 * fy;
  return (float)(c0 * (1 - fz) + c1 * fz);
}

}  // namespace

void synth_phantom(uint64_t seed, const PhantomShape& shape, int n_ribs,
                   PhantomVolume& volume, ComponentMasks& masks) {
  if (shape.nz < 16 || shape.ny < 16 || shape.nx < 16)
    throw std::invalid_argument("synth_phantom: every axis must be >= 16");
  if (n_ribs < 1) throw std::invalid_argument("synth_phantom: n_ribs >= 1");

  Rng rng(seed ^ 0x7068616e746f6dULL);
  const int nz = shape.nz, ny = shape.ny, nx = shape.nx;
  volume.voxels = Volume(nz, ny, nx);
  volume.seed = seed;
  masks.rib = Volume(nz, ny, nx);
  masks.lung = Volume(nz, ny, nx);
  Volume& vox = volume.voxels;

  const double cz = 0.5 * (nz - 1), cy = 0.5 * (ny - 1), cx = 0.5 * (nx - 1);
  Ellipsoid torso{cz, cy, cx, 0.47 * nz, 0.36 * ny, 0.44 * nx};

  const double lung_dx = (0.20 + 0.02 * rng.uniform()) * nx;
  Ellipsoid lungs[2] = {
      {cz + 0.02 * nz, cy, cx - lung_dx, 0.33 * nz, 0.24 * ny, 0.155 * nx},
      {cz + 0.02 * nz, cy, cx + lung_dx, 0.33 * nz, 0.24 * ny, 0.155 * nx},
  };

  const float soft_tissue = 0.25f, lung_air = 0.06f, rib_bone = 0.85f,
              nodule_val = 0.50f;

  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!torso.contains(z, y, x)) continue;
        float v = soft_tissue;
        for (const auto& lung : lungs)
          if (lung.contains(z, y, x)) {
            v = lung_air;
            masks.lung.at(z, y, x) = 1.0f;
          }
        vox.at(z, y, x) = v;
      }

  // Nodules: 1-3 spheres inside a lung. Values change, the lung mask keeps
  // covering them (they are lung tissue).
  const int n_nodules = 1 + rng.uniform_int(3);
  for (int k = 0; k < n_nodules; ++k) {
    const Ellipsoid& lung = lungs[rng.uniform_int(2)];
    const double r = (0.02 + 0.02 * rng.uniform()) * nx;
    double pz, py, px;
    int guard = 0;
    do {
      pz = lung.cz + (2 * rng.uniform() - 1) * lung.rz * 0.6;
      py = lung.cy + (2 * rng.uniform() - 1) * lung.ry * 0.6;
      px = lung.cx + (2 * rng.uniform() - 1) * lung.rx * 0.6;
    } while (!lung.contains(pz, py, px, -r) && ++guard < 64);
    const int z0 = std::max(0, (int)(pz - r)), z1 = std::min(nz - 1, (int)(pz + r) + 1);
    for (int z = z0; z <= z1; ++z)
      for (int y = std::max(0, (int)(py - r)); y <= std::min(ny - 1, (int)(py + r) + 1); ++y)
        for (int x = std::max(0, (int)(px - r)); x <= std::min(nx - 1, (int)(px + r) + 1); ++x) {
          const double d2 = (z - pz) * (z - pz) + (y - py) * (y - py) +
                            (x - px) * (x - px);
          if (d2 <= r * r && masks.lung.at(z, y, x) > 0.5f)
            vox.at(z, y, x) = nodule_val;
        }
  }

  // Ribs: n_ribs left/right pairs of elliptical arcs hugging the torso wall,
  // sloping slightly downward toward the front (sternum side).
  const double rib_radius = std::max(1.15, 0.021 * nx);
  const double arc_rx = 0.385 * nx, arc_ry = 0.305 * ny;
  const double z_lo = cz - 0.32 * nz, z_hi = cz + 0.34 * nz;
  for (int k = 0; k < n_ribs; ++k) {
    const double fz =
        n_ribs == 1 ? 0.5 : (double)k / (n_ribs - 1);
    const double base_z = z_lo + fz * (z_hi - z_lo) +
                          rng.uniform(-0.01, 0.01) * nz;
    for (int side = 0; side < 2; ++side) {
      const double s = side == 0 ? -1.0 : 1.0;
      const double rxk = arc_rx * (1.0 + rng.uniform(-0.04, 0.04));
      const double ryk = arc_ry * (1.0 + rng.uniform(-0.04, 0.04));
      const double drop = 0.045 * nz;
      const double t0 = 0.10 * M_PI, t1 = 0.90 * M_PI;
      const int steps = (int)std::ceil((t1 - t0) * std::max(rxk, ryk) / 0.4);
      for (int i = 0; i <= steps; ++i) {
        const double t = t0 + (t1 - t0) * i / steps;
        const double x = cx + s * rxk * std::sin(t);
        const double y = cy - ryk * std::cos(t);
        const double z = base_z + drop * std::cos(t);
        stamp_sphere(vox, masks.rib, masks.lung, z, y, x, rib_radius, rib_bone);
      }
    }
  }
}

PhantomVolume inpaint_ribs(const PhantomVolume& volume, const Volume& rib_mask) {
  const Volume& src = volume.voxels;
  if (!src.same_shape(rib_mask))
    throw std::invalid_argument("inpaint_ribs: mask shape mismatch");

  std::vector<int64_t> masked;
  for (int64_t i = 0; i < src.size(); ++i)
    if (rib_mask.v[i] > 0.5f) masked.push_back(i);
  PhantomVolume out = volume;
  if (masked.empty()) return out;
  if ((int64_t)masked.size() == src.size())
    throw std::invalid_argument("inpaint_ribs: mask covers the whole volume");

  Volume& cur = out.voxels;
  // Start from the mean of the unmasked voxels bordering the mask.
  const int nz = src.nz, ny = src.ny, nx = src.nx;
  auto idx = [&](int z, int y, int x) {
    return ((int64_t)z * ny + y) * nx + x;
  };
  double boundary_sum = 0.0;
  int64_t boundary_n = 0;
  for (int64_t i : masked) {
    const int z = (int)(i / ((int64_t)ny * nx));
    const int y = (int)((i / nx) % ny);
    const int x = (int)(i % nx);
    const int dz[6] = {-1, 1, 0, 0, 0, 0};
    const int dy[6] = {0, 0, -1, 1, 0, 0};
    const int dx[6] = {0, 0, 0, 0, -1, 1};
    for (int d = 0; d < 6; ++d) {
      const int z2 = z + dz[d], y2 = y + dy[d], x2 = x + dx[d];
      if (z2 < 0 || y2 < 0 || x2 < 0 || z2 >= nz || y2 >= ny || x2 >= nx)
        continue;
      if (rib_mask.v[idx(z2, y2, x2)] <= 0.5f) {
        boundary_sum += src.v[idx(z2, y2, x2)];
        ++boundary_n;
      }
    }
  }
  const float init = boundary_n ? (float)(boundary_sum / boundary_n) : 0.0f;
  for (int64_t i : masked) cur.v[i] = init;

  // Jacobi sweeps: each masked voxel becomes the average of its in-grid
  // 6-neighborhood from the previous iterate.
  Volume next = cur;
  const double tol = 1e-4;
  const int max_iters = 20000;
  for (int it = 0; it < max_iters; ++it) {
    double max_delta = 0.0;
    for (int64_t i : masked) {
      const int z = (int)(i / ((int64_t)ny * nx));
      const int y = (int)((i / nx) % ny);
      const int x = (int)(i % nx);
      double s = 0.0;
      int n = 0;
      if (z > 0) { s += cur.v[idx(z - 1, y, x)]; ++n; }
      if (z < nz - 1) { s += cur.v[idx(z + 1, y, x)]; ++n; }
      if (y > 0) { s += cur.v[idx(z, y - 1, x)]; ++n; }
      if (y < ny - 1) { s += cur.v[idx(z, y + 1, x)]; ++n; }
      if (x > 0) { s += cur.v[idx(z, y, x - 1)]; ++n; }
      if (x < nx - 1) { s += cur.v[idx(z, y, x + 1)]; ++n; }
      const float nv = (float)(s / n);
      max_delta = std::max(max_delta, (double)std::fabs(nv - cur.v[i]));
      next.v[i] = nv;
    }
    for (int64_t i : masked) cur.v[i] = next.v[i];
    if (max_delta < tol) return out;
  }
  throw std::runtime_error("inpaint_ribs: diffusion did not converge");
}

Image project(const PhantomVolume& volume, const ProjectionGeometry& geom) {
  if (std::fabs(geom.azimuth_deg) > 10.0 || std::fabs(geom.elevation_deg) > 10.0)
    throw std::invalid_argument("project: angles must be within +-10 degrees");
  const Volume& v = volume.voxels;
  const double az = geom.azimuth_deg * M_PI / 180.0;
  const double el = geom.elevation_deg * M_PI / 180.0;

  // Intrinsic grid (z,x) with rays along y of the rotated frame. The volume
  // is rotated by Rz(az)*Rx(el) about its center; we sample the inverse map.
  const double ca = std::cos(az), sa = std::sin(az);
  const double ce = std::cos(el), se = std::sin(el);
  const double cz = 0.5 * (v.nz - 1), cy = 0.5 * (v.ny - 1),
               cx = 0.5 * (v.nx - 1);

  Image plane(v.nz, v.nx);
  for (int i = 0; i < v.nz; ++i) {
    const double zq = i - cz;
    for (int j = 0; j < v.nx; ++j) {
      const double xq = j - cx;
      double acc = 0.0;
      for (int k = 0; k < v.ny; ++k) {
        const double yq = k - cy;
        // inverse rotation: Rx(-el) then Rz(-az)
        const double y1 = ce * yq + se * zq;
        const double z1 = -se * yq + ce * zq;
        const double x1 = ca * xq + sa * y1;
        const double y2 = -sa * xq + ca * y1;
        acc += trilinear(v, z1 + cz, y2 + cy, x1 + cx);
      }
      plane.at(i, j) = (float)(acc * volume.spacing[1]);
    }
  }
  return resize_bilinear(plane, geom.detector_h, geom.detector_w);
}

Image bone_support_mask(const Image& bone) {
  Image out(bone.h, bone.w);
  for (int64_t i = 0; i < bone.size(); ++i)
    out.v[i] = (bone.v[i] + 1.0f) * 0.5f > kBoneSupportFraction ? 1.0f : 0.0f;
  return out;
}

DrrSample render_drr_sample(const PhantomVolume& volume,
                            const PhantomVolume& suppressed_volume,
                            const ComponentMasks& masks,
                            const ProjectionGeometry& geom) {
  if (!volume.voxels.same_shape(suppressed_volume.voxels) ||
      !volume.voxels.same_shape(masks.rib) ||
      !volume.voxels.same_shape(masks.lung))
    throw std::invalid_argument("render_drr_sample: shape mismatch");

  PhantomVolume rib_only = volume;
  for (int64_t i = 0; i < rib_only.voxels.size(); ++i)
    rib_only.voxels.v[i] = volume.voxels.v[i] * masks.rib.v[i];
  PhantomVolume lung_vol = volume;
  lung_vol.voxels = masks.lung;

  const Image raw_i = project(volume, geom);
  const Image raw_q = project(suppressed_volume, geom);
  const Image raw_b = project(rib_only, geom);
  const Image raw_l = project(lung_vol, geom);

  DrrSample s;
  s.geom = geom;
  // One affine (from raw I's range) shared by I and Q keeps I = Q + R exact.
  s.image = normalize_minmax_pm1(raw_i, raw_i);
  s.suppressed = normalize_minmax_pm1(raw_q, raw_i);
  s.residual = Image(s.image.h, s.image.w);
  for (int64_t i = 0; i < s.residual.size(); ++i)
    s.residual.v[i] = s.image.v[i] - s.suppressed.v[i];
  s.bone = normalize_minmax_pm1(raw_b, raw_b);
  s.lung_mask = Image(raw_l.h, raw_l.w);
  for (int64_t i = 0; i < raw_l.size(); ++i)
    s.lung_mask.v[i] = raw_l.v[i] > 0.0f ? 1.0f : 0.0f;
  return s;
}

std::vector<ProjectionGeometry> sample_geometries(int n, int detector_h,
                                                  int detector_w) {
  if (n < 1) throw std::invalid_argument("sample_geometries: n >= 1");
  const int na = (int)std::ceil(std::sqrt((double)n));
  const int ne = (n + na - 1) / na;
  std::vector<ProjectionGeometry> out;
  out.reserve(n);
  for (int ia = 0; ia < na && (int)out.size() < n; ++ia) {
    const double azimuth = na == 1 ? 0.0 : -10.0 + 20.0 * ia / (na - 1);
    for (int ie = 0; ie < ne && (int)out.size() < n; ++ie) {
      const double elevation = ne == 1 ? 0.0 : -10.0 + 20.0 * ie / (ne - 1);
      ProjectionGeometry g;
      g.azimuth_deg = azimuth;
      g.elevation_deg = elevation;
      g.detector_h = detector_h;
      g.detector_w = detector_w;
      out.push_back(g);
    }
  }
  return out;
}

PseudoCxrSample render_pseudo_cxr(const DrrSample& sample,
                                  const DomainStyle& style) {
  if (style.gamma <= 0 || style.gain <= 0 || style.noise_sigma < 0 ||
      style.blur_radius < 0)
    throw std::invalid_argument("render_pseudo_cxr: invalid style");

  // Shared monotone transform: tone curve on [0,1], blur, one noise field,
  // then the fixed affine back to [-1,1]. Applying the identical transform
  // (with the identical noise realization) to Q keeps the ground truth
  // decomposition well-defined. The pixel chain stays in double until the
  // final store so the identity style is an exact fixed point.
  const int h = sample.image.h, w = sample.image.w;
  std::vector<double> noise((size_t)h * w, 0.0);
  if (style.noise_sigma > 0) {
    Rng rng(style.seed ^ 0x6e6f697365ULL);
    for (auto& x : noise) x = style.noise_sigma * rng.normal();
  }
  auto blur_double = [&](std::vector<double>& buf) {
    if (style.blur_radius <= 0.0) return;
    const double sigma = style.blur_radius;
    const int r = std::max(1, (int)std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
      k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
      sum += k[i + r];
    }
    for (auto& x : k) x /= sum;
    std::vector<double> tmp(buf.size());
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d)
          s += k[d + r] * buf[(size_t)i * w + std::clamp(j + d, 0, w - 1)];
        tmp[(size_t)i * w + j] = s;
      }
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d)
          s += k[d + r] * tmp[(size_t)std::clamp(i + d, 0, h - 1) * w + j];
        buf[(size_t)i * w + j] = s;
      }
  };
  auto transform = [&](const Image& in) {
    std::vector<double> buf((size_t)h * w);
    for (int64_t i = 0; i < in.size(); ++i) {
      const double u = std::clamp((in.v[i] + 1.0) * 0.5, 0.0, 1.0);
      // vectorized pow is not exact at gamma == 1, which would break the
      // identity-style fixed point
      const double p = style.gamma == 1.0 ? u : std::pow(u, style.gamma);
      buf[(size_t)i] = std::clamp(style.gain * p + style.bias, 0.0, 1.0);
    }
    blur_double(buf);
    Image t(h, w);
    for (int64_t i = 0; i < in.size(); ++i)
      t.v[i] = (float)std::clamp(2.0 * (buf[(size_t)i] + noise[(size_t)i]) - 1.0,
                                 -1.0, 1.0);
    return t;
  };

  PseudoCxrSample out;
  out.style = style;
  out.image = transform(sample.image);
  out.truth_suppressed = transform(sample.suppressed);
  out.truth_residual = Image(out.image.h, out.image.w);
  for (int64_t i = 0; i < out.image.size(); ++i)
    out.truth_residual.v[i] = out.image.v[i] - out.truth_suppressed.v[i];

  out.eval_rib_mask = bone_support_mask(sample.bone);
  out.eval_lung_mask = sample.lung_mask;
  Image dilated = dilate_chebyshev(out.eval_rib_mask, 5);
  out.eval_background_ring = Image(dilated.h, dilated.w);
  for (int64_t i = 0; i < dilated.size(); ++i)
    out.eval_background_ring.v[i] =
        dilated.v[i] > 0.5f && out.eval_rib_mask.v[i] < 0.5f ? 1.0f : 0.0f;
  return out;
}

}  // namespace rsup
