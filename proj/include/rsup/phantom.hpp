#pragma once

#include <cstdint>
#include <vector>

#include "rsup/image.hpp"

namespace rsup {

// Synthetic CT-like chest phantom: soft-tissue torso, two lungs, curved
// tubular ribs and at least one lung nodule, with exact voxel masks.
struct PhantomVolume {
  Volume voxels;                        // attenuation in [0,1]
  float spacing[3] = {1.f, 1.f, 1.f};   // (z,y,x), arbitrary length units
  uint64_t seed = 0;
};

struct ComponentMasks {
  Volume rib;   // {0,1}
  Volume lung;  // {0,1}; rib and lung never overlap in 3D
};

struct ProjectionGeometry {
  double azimuth_deg = 0.0;    // rotation about the z (vertical) axis
  double elevation_deg = 0.0;  // rotation about the x (lateral) axis
  int detector_h = 64;
  int detector_w = 64;
};

// One aligned projection set; the supervised training unit.
// All images share one shape; I and Q share one affine normalization so
// I = Q + R holds exactly.
struct DrrSample {
  Image image;       // I: full projection, in [-1,1]
  Image suppressed;  // Q: rib-inpainted projection, same affine as I
  Image residual;    // R = I - Q
  Image bone;        // B: rib-only projection, own [-1,1] normalization
  Image lung_mask;   // L: {0,1}, rays intersecting lung
  ProjectionGeometry geom;
};

// Appearance transform standing between the DRR and pseudo-CXR domains.
// The identity style (gamma=1, gain=1, bias=0, noise=0, blur=0) is a fixed
// point of render_pseudo_cxr.
struct DomainStyle {
  double gamma = 1.0;        // > 0
  double gain = 1.0;         // > 0
  double bias = 0.0;
  double noise_sigma = 0.0;  // >= 0
  double blur_radius = 0.0;  // >= 0, Gaussian sigma in pixels
  uint64_t seed = 0;
};

struct PseudoCxrSample {
  Image image;  // I_x in [-1,1]
  // Held-out ground truth (the data is synthetic, so it exists).
  Image truth_suppressed;  // truth Q_x; image = truth_Q + truth_R within 1e-6
  Image truth_residual;
  // Evaluation masks; consumed by metrics only, never by training.
  Image eval_rib_mask;
  Image eval_lung_mask;
  Image eval_background_ring;  // Chebyshev ring of width <= 5 px around ribs
  DomainStyle style;
};

// --- operations --------------------------------------------------------------

struct PhantomShape {
  int nz = 64, ny = 64, nx = 64;
};

// Deterministic for a fixed seed. Requires every axis >= 16 and n_ribs >= 1.
void synth_phantom(uint64_t seed, const PhantomShape& shape, int n_ribs,
                   PhantomVolume& volume, ComponentMasks& masks);

// Harmonic (diffusion) inpainting of the masked voxels, iterated until the
// largest per-voxel update drops below 1e-4. Unmasked voxels are untouched.
PhantomVolume inpaint_ribs(const PhantomVolume& volume, const Volume& rib_mask);

// Parallel-beam line integral along the y axis of the rotated volume:
// trilinear sampling, sum scaled by spacing, then bilinear resampling onto
// the detector. Angles are limited to +-10 degrees.
Image project(const PhantomVolume& volume, const ProjectionGeometry& geom);

DrrSample render_drr_sample(const PhantomVolume& volume,
                            const PhantomVolume& suppressed_volume,
                            const ComponentMasks& masks,
                            const ProjectionGeometry& geom);

// n angle pairs on a near-square uniform grid over [-10,10]^2 (7x6 for
// n=42); n=1 degenerates to the centered view.
std::vector<ProjectionGeometry> sample_geometries(int n, int detector_h = 64,
                                                  int detector_w = 64);

PseudoCxrSample render_pseudo_cxr(const DrrSample& sample,
                                  const DomainStyle& style);

// Fraction of the normalized bone image's dynamic range below which a pixel
// does not count as projected-rib support. Mimics a manual rib annotation:
// the visible core, not the faint interpolation smear.
inline constexpr double kBoneSupportFraction = 0.25;

// Support of the projected rib mask, used for eval_rib_mask.
Image bone_support_mask(const Image& bone);

}  // namespace rsup
