#pragma once

#include <string>
#include <vector>

#include "rsup/checkpoint.hpp"
#include "rsup/dataset.hpp"
#include "rsup/image.hpp"

namespace rsup {

struct WeberRegions {
  const Image* rib_mask;
  const Image* background_ring;
};

// Weber contrast C_w = mean(rib) / mean(ring) - 1 on a [0,1] image.
double weber_contrast(const Image& image01, const WeberRegions& regions);

// Deterministic perceptual distance: a fixed-seed random convolutional
// stack stands in for a pretrained backbone. Swappable via FeatureExtractor.
struct LPIPSConfig {
  int n_layers = 3;
  std::vector<int> channels = {8, 16, 16};
  uint64_t extractor_seed = 17;
  std::vector<double> layer_weights = {1.0, 1.0, 1.0};
  void validate() const;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // Feature maps (C_l, H_l, W_l), one per layer, for a [-1,1] image.
  virtual std::vector<Tensor> features(const Image& img) const = 0;
};

class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(const LPIPSConfig& cfg);
  std::vector<Tensor> features(const Image& img) const override;

 private:
  LPIPSConfig cfg_;
  std::vector<Tensor> weights_;  // (O,C,3,3) per layer
};

// Channel-unit-normalized, layer-weighted squared feature distance,
// averaged over spatial positions and summed over layers.
double lpips(const Image& x, const Image& x0, const LPIPSConfig& cfg);
double lpips(const Image& x, const Image& x0, const FeatureExtractor& fx,
             const std::vector<double>& layer_weights);

// PSNR over the masked pixels, data range 2 ([-1,1] images); reported value
// capped at 99 dB when the MSE underflows 1e-12.
double psnr(const Image& x, const Image& ref, const Image& mask);

// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=2) over
// windows whose centers lie in the mask; border windows are clipped and the
// Gaussian weights renormalized.
double ssim(const Image& x, const Image& ref, const Image& mask);

double mae(const Image& a, const Image& b);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;  // two-sided
};
// Paired two-sided t-test; throws on n < 2 or zero-variance differences.
TTestResult paired_ttest(const std::vector<double>& a,
                         const std::vector<double>& b);

// Regularized incomplete beta I_x(a,b) (exposed for the metric oracles).
double incomplete_beta(double a, double b, double x);

// --- evaluation harness -------------------------------------------------------

struct PerImageMetrics {
  double c_w = 0.0;
  double lpips = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double mae_rec = 0.0;
  double mae_cyc = 0.0;
};

struct MethodEval {
  std::string name;
  std::vector<Image> pred_q;  // aligned with the evaluation samples
  bool has_recon = false;     // MAE_rec / MAE_cyc available
  std::vector<double> mae_rec, mae_cyc;
};

struct PairwiseTest {
  std::string metric, method_a, method_b;
  double p = 1.0;
};

struct MetricReport {
  std::vector<std::string> metric_names;
  std::vector<std::string> method_names;
  std::vector<std::vector<PerImageMetrics>> per_image;  // [method][sample]
  std::vector<std::vector<double>> mean, stddev;        // [method][metric]
  std::vector<PairwiseTest> tests;

  std::string to_csv() const;
  std::string summary() const;
  int method_index(const std::string& name) const;
  double mean_of(const std::string& method, const std::string& metric) const;
  const std::vector<double> metric_values(const std::string& method,
                                          const std::string& metric) const;
};

// Computes C_w on the prediction, masked LPIPS/PSNR/SSIM against the held
// out truth (mask: lung minus rib, per-sample), plus MAE columns when the
// method carries them, and pairwise paired t-tests between all methods.
MetricReport evaluate_methods(const std::vector<PseudoCxrSample>& samples,
                              const std::vector<MethodEval>& methods,
                              const LPIPSConfig& cfg);

// Runs the generator from a checkpoint over the evaluation set: suppressed
// predictions at native resolution plus reconstruction / cycle errors
// (each CXR is paired with the same-index DRR for the cycle branch).
MethodEval method_from_checkpoint(const std::string& name,
                                  const CheckpointData& ckpt,
                                  const Dataset& eval_data);

// Wraps precomputed suppressed images (e.g. the dataset's own truth).
MethodEval method_from_images(const std::string& name,
                              std::vector<Image> pred_q);

}  // namespace rsup
