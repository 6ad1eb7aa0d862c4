#pragma once

#include <string>
#include <vector>

#include "rsup/autodiff.hpp"
#include "rsup/image.hpp"

namespace rsup {

// Loss weights; defaults are the published operating point.
struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_f = 1.0;
  double lambda_i = 10.0;
  double lambda_grad = 10.0;
  double lambda_inter = 500.0;
  double lambda_lap = 1.0;
  void validate() const;
};

struct BoneMaskConfig {
  double sigma_spatial = 3.0;   // pixels
  double sigma_range = 0.1;     // intensity units
  double theta_thresh = 0.0;    // threshold in the rescaled [-1,1] space
  int kernel_radius = 6;        // must be >= ceil(2 * sigma_spatial)
  void validate() const;
};

enum class TrainStage { kInit, kFine };

// Named scalar terms plus the stage-weighted totals.
struct LossReport {
  std::vector<std::pair<std::string, double>> terms;
  double total_g = 0.0;
  double total_d = 0.0;
  double decomp_dev = 0.0;  // max |I' - Q' - R'| seen in the forward pass

  bool has(const std::string& name) const;
  double get(const std::string& name) const;
  void set(const std::string& name, double v);
  std::string log_line(int64_t iter, TrainStage stage) const;
};

// --- scalar losses (all MEAN-reduced, so weights are resolution-free) --------

// Mean absolute difference.
Var l1(const Var& a, const Var& b);

// L1(Q'-Q) + L1(R'-R) + L1(B'-B) on a supervised DRR sample.
Var loss_supervised(const Var& q_pred, const Var& r_pred, const Var& b_pred,
                    const Tensor& q_true, const Tensor& r_true,
                    const Tensor& b_true);

enum class AdvRole { kDReal, kDFake, kGen };
// Least-squares GAN on a raw patch map: mean((D-1)^2) for real/generator
// targets, mean(D^2) for fakes.
Var loss_adversarial(const Var& patch, AdvRole role);

// L_c (2 contrast terms) and L_s (4 structure terms) on encoder features of
// the source images and the domain transfers.
struct FeatureConsistency {
  Var l_c, l_s;
};
FeatureConsistency loss_feature_consistency(
    const Var& c_x, const Var& c_d, const Var& c_of_dx, const Var& c_of_xd,
    const Var& s_x, const Var& s_d, const Var& s_of_xd, const Var& s_of_dx,
    const Var& b_x, const Var& b_d, const Var& b_of_xd, const Var& b_of_dx);

struct RecCyc {
  Var l_rec, l_cyc;
};
RecCyc loss_rec_cyc(const Var& ix_rec, const Tensor& ix, const Var& id_rec,
                    const Tensor& id, const Var& ix_cyc, const Var& id_cyc);

// Brute-force bilateral filter (Gaussian spatial x Gaussian range kernel).
Image bilateral_filter(const Image& img, const BoneMaskConfig& cfg);

// Rescales B' to [-1,1] by its own range, bilateral-filters, thresholds.
// Operates on plain values: no gradient ever flows through this path.
Image bone_mask(const Image& bone_pred, const BoneMaskConfig& cfg);

// L1 of R' restricted to (1-M) U (1-L); masks are {0,1} images.
Var loss_inter(const Var& r_pred, const Image& bone_mask_img,
               const Image& lung_mask_img);

// L1 of the Laplacian of R' restricted to M U L.
Var loss_laplace(const Var& r_pred, const Image& bone_mask_img,
                 const Image& lung_mask_img);

// Binarize a predicted soft mask at 0.5 into a constant tensor.
Tensor binarize_at(const Tensor& soft, double thresh = 0.5);

// Assembles the two-stage adversarial totals from named parts; missing
// stage-required parts throw. The ablation modes without discriminators
// (RM, nRM) assemble their own simpler reports in the trainer.
LossReport total_loss(TrainStage stage,
                      const std::vector<std::pair<std::string, double>>& parts,
                      const LossWeights& weights);

}  // namespace rsup
