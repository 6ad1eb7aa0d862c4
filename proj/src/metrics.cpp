#include "rsup/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "rsup/autodiff.hpp"
#include "rsup/rng.hpp"
#include "rsup/trainer.hpp"

namespace rsup {

double weber_contrast(const Image& image01, const WeberRegions& regions) {
  const Image& rib = *regions.rib_mask;
  const Image& ring = *regions.background_ring;
  if (!rib.same_shape(image01) || !ring.same_shape(image01))
    throw std::invalid_argument("weber_contrast: mask shape mismatch");
  double sr = 0.0, sb = 0.0;
  int64_t nr = 0, nb = 0;
  for (int64_t i = 0; i < image01.size(); ++i) {
    if (rib.v[i] > 0.5f) {
      sr += image01.v[i];
      ++nr;
    }
    if (ring.v[i] > 0.5f) {
      sb += image01.v[i];
      ++nb;
    }
  }
  if (nr == 0 || nb == 0)
    throw std::invalid_argument("weber_contrast: empty region");
  const double ib = sb / nb;
  if (ib <= 1e-6)
    throw std::invalid_argument("weber_contrast: background intensity <= 1e-6");
  return (sr / nr) / ib - 1.0;
}

void LPIPSConfig::validate() const {
  if (n_layers < 1 || (int)channels.size() != n_layers ||
      (int)layer_weights.size() != n_layers)
    throw std::invalid_argument("LPIPSConfig: layer lists must match n_layers");
  for (double w : layer_weights)
    if (w < 0) throw std::invalid_argument("LPIPSConfig: weights must be >= 0");
}

RandomConvExtractor::RandomConvExtractor(const LPIPSConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  Rng rng(cfg.extractor_seed ^ 0x6c70697073ULL);
  int in_ch = 1;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const int oc = cfg.channels[l];
    Tensor w({oc, in_ch, 3, 3});
    const double stddev = 1.0 / std::sqrt(9.0 * in_ch);
    for (int64_t i = 0; i < w.size(); ++i) w[i] = stddev * rng.normal();
    weights_.push_back(std::move(w));
    in_ch = oc;
  }
}

std::vector<Tensor> RandomConvExtractor::features(const Image& img) const {
  std::vector<Tensor> out;
  Var h = make_const(image_to_tensor(img));
  for (const auto& w : weights_) {
    h = leaky_relu(conv2d(h, make_const(w), nullptr, 2, 1), 0.2);
    out.push_back(h->value);
  }
  return out;
}

double lpips(const Image& x, const Image& x0, const FeatureExtractor& fx,
             const std::vector<double>& layer_weights) {
  if (!x.same_shape(x0)) throw std::invalid_argument("lpips: shape mismatch");
  const auto fa = fx.features(x);
  const auto fb = fx.features(x0);
  if (fa.size() != layer_weights.size())
    throw std::invalid_argument("lpips: weight count mismatch");
  double d = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    const Tensor& ya = fa[l];
    const Tensor& yb = fb[l];
    const int c = ya.dim(0), h = ya.dim(1), w = ya.dim(2);
    double layer_sum = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double na = 1e-10, nb = 1e-10;
        for (int ci = 0; ci < c; ++ci) {
          na += ya.at(ci, i, j) * ya.at(ci, i, j);
          nb += yb.at(ci, i, j) * yb.at(ci, i, j);
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        for (int ci = 0; ci < c; ++ci) {
          const double diff = ya.at(ci, i, j) / na - yb.at(ci, i, j) / nb;
          layer_sum += diff * diff;
        }
      }
    const double wl = layer_weights[l];
    d += wl * wl * layer_sum / ((double)h * w);
  }
  return d;
}

double lpips(const Image& x, const Image& x0, const LPIPSConfig& cfg) {
  RandomConvExtractor fx(cfg);
  return lpips(x, x0, fx, cfg.layer_weights);
}

double psnr(const Image& x, const Image& ref, const Image& mask) {
  if (!x.same_shape(ref) || !x.same_shape(mask))
    throw std::invalid_argument("psnr: shape mismatch");
  double se = 0.0;
  int64_t n = 0;
  for (int64_t i = 0; i < x.size(); ++i) {
    if (mask.v[i] <= 0.5f) continue;
    const double d = (double)x.v[i] - ref.v[i];
    se += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("psnr: empty mask");
  const double mse = se / n;
  if (mse < 1e-12) return 99.0;
  const double range = 2.0;
  return 10.0 * std::log10(range * range / mse);
}

namespace {

struct SsimKernel {
  int r = 5;
  std::vector<double> k;  // (2r+1)^2 Gaussian, sigma 1.5
  SsimKernel() {
    const double sigma = 1.5;
    k.resize((2 * r + 1) * (2 * r + 1));
    for (int di = -r; di <= r; ++di)
      for (int dj = -r; dj <= r; ++dj)
        k[(di + r) * (2 * r + 1) + dj + r] =
            std::exp(-0.5 * (di * di + dj * dj) / (sigma * sigma));
  }
};

}  // namespace

double ssim(const Image& x, const Image& ref, const Image& mask) {
  if (!x.same_shape(ref) || !x.same_shape(mask))
    throw std::invalid_argument("ssim: shape mismatch");
  static const SsimKernel kern;
  const int r = kern.r;
  const double L = 2.0;
  const double c1 = (0.01 * L) * (0.01 * L);
  const double c2 = (0.03 * L) * (0.03 * L);

  double total = 0.0;
  int64_t n = 0;
  for (int i = 0; i < x.h; ++i)
    for (int j = 0; j < x.w; ++j) {
      if (mask.at(i, j) <= 0.5f) continue;
      double wsum = 0.0, mx = 0.0, my = 0.0;
      for (int di = -r; di <= r; ++di) {
        const int ii = i + di;
        if (ii < 0 || ii >= x.h) continue;
        for (int dj = -r; dj <= r; ++dj) {
          const int jj = j + dj;
          if (jj < 0 || jj >= x.w) continue;
          const double w = kern.k[(di + r) * (2 * r + 1) + dj + r];
          wsum += w;
          mx += w * x.at(ii, jj);
          my += w * ref.at(ii, jj);
        }
      }
      mx /= wsum;
      my /= wsum;
      double vx = 0.0, vy = 0.0, cov = 0.0;
      for (int di = -r; di <= r; ++di) {
        const int ii = i + di;
        if (ii < 0 || ii >= x.h) continue;
        for (int dj = -r; dj <= r; ++dj) {
          const int jj = j + dj;
          if (jj < 0 || jj >= x.w) continue;
          const double w = kern.k[(di + r) * (2 * r + 1) + dj + r] / wsum;
          const double dx = x.at(ii, jj) - mx;
          const double dy = ref.at(ii, jj) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cov += w * dx * dy;
        }
      }
      total += (2 * mx * my + c1) * (2 * cov + c2) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++n;
    }
  if (n == 0) throw std::invalid_argument("ssim: empty mask");
  return total / n;
}

double mae(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mae: shape mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += std::fabs((double)a.v[i] - b.v[i]);
  return s / a.size();
}

// Continued-fraction evaluation of the incomplete beta function.
static double betacf(double a, double b, double x) {
  const int max_it = 200;
  const double eps = 3e-14, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_it; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0)
    throw std::invalid_argument("incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_ttest(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_ttest: length mismatch");
  const int n = (int)a.size();
  if (n < 2) throw std::invalid_argument("paired_ttest: need n >= 2");
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1));
  if (sd < 1e-300)
    throw std::invalid_argument("paired_ttest: zero-variance differences");
  TTestResult r;
  r.df = n - 1;
  r.t = mean / (sd / std::sqrt((double)n));
  r.p = incomplete_beta(0.5 * r.df, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

// --- evaluation harness ---------------------------------------------------------

namespace {

Image to01(const Image& pm1) {
  Image out(pm1.h, pm1.w);
  for (int64_t i = 0; i < out.size(); ++i) out.v[i] = (pm1.v[i] + 1.0f) * 0.5f;
  return out;
}

Image lung_minus_rib(const PseudoCxrSample& s) {
  Image m(s.eval_lung_mask.h, s.eval_lung_mask.w);
  for (int64_t i = 0; i < m.size(); ++i)
    m.v[i] = s.eval_lung_mask.v[i] > 0.5f && s.eval_rib_mask.v[i] < 0.5f ? 1.0f
                                                                         : 0.0f;
  return m;
}

Image apply_mask(const Image& img, const Image& mask) {
  Image out = img;
  for (int64_t i = 0; i < out.size(); ++i)
    if (mask.v[i] <= 0.5f) out.v[i] = 0.0f;
  return out;
}

}  // namespace

int MetricReport::method_index(const std::string& name) const {
  for (size_t i = 0; i < method_names.size(); ++i)
    if (method_names[i] == name) return (int)i;
  throw std::out_of_range("MetricReport: no method " + name);
}

double MetricReport::mean_of(const std::string& method,
                             const std::string& metric) const {
  const int mi = method_index(method);
  for (size_t k = 0; k < metric_names.size(); ++k)
    if (metric_names[k] == metric) return mean[mi][k];
  throw std::out_of_range("MetricReport: no metric " + metric);
}

const std::vector<double> MetricReport::metric_values(
    const std::string& method, const std::string& metric) const {
  const int mi = method_index(method);
  std::vector<double> out;
  out.reserve(per_image[mi].size());
  for (const auto& pm : per_image[mi]) {
    if (metric == "C_w") out.push_back(pm.c_w);
    else if (metric == "LPIPS") out.push_back(pm.lpips);
    else if (metric == "PSNR") out.push_back(pm.psnr);
    else if (metric == "SSIM") out.push_back(pm.ssim);
    else if (metric == "MAE_rec") out.push_back(pm.mae_rec);
    else if (metric == "MAE_cyc") out.push_back(pm.mae_cyc);
    else throw std::out_of_range("MetricReport: no metric " + metric);
  }
  return out;
}

MetricReport evaluate_methods(const std::vector<PseudoCxrSample>& samples,
                              const std::vector<MethodEval>& methods,
                              const LPIPSConfig& cfg) {
  if (samples.empty())
    throw std::invalid_argument("evaluate_methods: empty sample set");
  RandomConvExtractor fx(cfg);
  MetricReport rep;
  rep.metric_names = {"C_w", "LPIPS", "PSNR", "SSIM", "MAE_rec", "MAE_cyc"};
  for (const auto& m : methods) {
    if (m.pred_q.size() != samples.size())
      throw std::invalid_argument("evaluate_methods: method '" + m.name +
                                  "' sample count mismatch");
    rep.method_names.push_back(m.name);
    std::vector<PerImageMetrics> rows;
    for (size_t i = 0; i < samples.size(); ++i) {
      const PseudoCxrSample& s = samples[i];
      const Image& q = m.pred_q[i];
      PerImageMetrics pm;
      WeberRegions wr{&s.eval_rib_mask, &s.eval_background_ring};
      pm.c_w = weber_contrast(to01(q), wr);
      const Image mask = lung_minus_rib(s);
      pm.lpips = lpips(apply_mask(q, mask), apply_mask(s.truth_suppressed, mask),
                       fx, cfg.layer_weights);
      pm.psnr = psnr(q, s.truth_suppressed, mask);
      pm.ssim = ssim(q, s.truth_suppressed, mask);
      if (m.has_recon) {
        pm.mae_rec = m.mae_rec[i];
        pm.mae_cyc = m.mae_cyc[i];
      } else {
        pm.mae_rec = pm.mae_cyc = std::nan("");
      }
      rows.push_back(pm);
    }
    rep.per_image.push_back(std::move(rows));
  }

  const size_t nm = methods.size(), nk = rep.metric_names.size();
  rep.mean.assign(nm, std::vector<double>(nk, 0.0));
  rep.stddev.assign(nm, std::vector<double>(nk, 0.0));
  for (size_t m = 0; m < nm; ++m)
    for (size_t k = 0; k < nk; ++k) {
      const auto vals = rep.metric_values(rep.method_names[m], rep.metric_names[k]);
      double mu = 0.0;
      for (double v : vals) mu += v;
      mu /= vals.size();
      double ss = 0.0;
      for (double v : vals) ss += (v - mu) * (v - mu);
      rep.mean[m][k] = mu;
      rep.stddev[m][k] = vals.size() > 1 ? std::sqrt(ss / (vals.size() - 1)) : 0.0;
    }

  for (size_t k = 0; k < nk; ++k)
    for (size_t i = 0; i < nm; ++i)
      for (size_t j = i + 1; j < nm; ++j) {
        const auto va = rep.metric_values(rep.method_names[i], rep.metric_names[k]);
        const auto vb = rep.metric_values(rep.method_names[j], rep.metric_names[k]);
        bool finite = samples.size() >= 2;
        for (double v : va) finite = finite && std::isfinite(v);
        for (double v : vb) finite = finite && std::isfinite(v);
        if (!finite) continue;
        PairwiseTest pt;
        pt.metric = rep.metric_names[k];
        pt.method_a = rep.method_names[i];
        pt.method_b = rep.method_names[j];
        try {
          pt.p = paired_ttest(va, vb).p;
        } catch (const std::invalid_argument&) {
          continue;  // degenerate differences: no test row
        }
        rep.tests.push_back(pt);
      }
  return rep;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "method,sample";
  for (const auto& k : metric_names) out << "," << k;
  out << "\n";
  char buf[64];
  for (size_t m = 0; m < method_names.size(); ++m)
    for (size_t i = 0; i < per_image[m].size(); ++i) {
      const PerImageMetrics& pm = per_image[m][i];
      out << method_names[m] << "," << i;
      for (double v : {pm.c_w, pm.lpips, pm.psnr, pm.ssim, pm.mae_rec, pm.mae_cyc}) {
        if (std::isnan(v)) {
          out << ",";
        } else {
          std::snprintf(buf, sizeof(buf), ",%.9g", v);
          out << buf;
        }
      }
      out << "\n";
    }
  return out.str();
}

std::string MetricReport::summary() const {
  std::ostringstream out;
  out << "# PSNR range 2.0 ([-1,1] data), cap 99 dB; SSIM 11x11 Gaussian "
         "sigma 1.5, K1=0.01 K2=0.03; metrics over lung-minus-rib masks\n";
  out << "method";
  for (const auto& k : metric_names) out << "\t" << k;
  out << "\n";
  char buf[64];
  for (size_t m = 0; m < method_names.size(); ++m) {
    out << method_names[m];
    for (size_t k = 0; k < metric_names.size(); ++k) {
      if (std::isnan(mean[m][k])) {
        out << "\t-";
      } else {
        std::snprintf(buf, sizeof(buf), "\t%.4f (%.4f)", mean[m][k], stddev[m][k]);
        out << buf;
      }
    }
    out << "\n";
  }
  out << "\n# paired two-sided t-tests\n";
  for (const auto& t : tests) {
    std::snprintf(buf, sizeof(buf), "%.6g", t.p);
    out << t.metric << "\t" << t.method_a << " vs " << t.method_b << "\tp=" << buf
        << "\n";
  }
  return out.str();
}

MethodEval method_from_checkpoint(const std::string& name,
                                  const CheckpointData& ckpt,
                                  const Dataset& eval_data) {
  MethodEval me;
  me.name = name;
  me.has_recon = true;
  GeneratorBundle gens = generators_from_checkpoint(ckpt);
  for (size_t i = 0; i < eval_data.cxr.size(); ++i) {
    const PseudoCxrSample& s = eval_data.cxr[i];
    me.pred_q.push_back(suppress(s.image, ckpt).suppressed_full);
    // Reconstruction / cycle errors need a DRR partner; use the aligned one.
    const DrrSample& d = eval_data.drr[i % eval_data.drr.size()];
    TransferSet ts = ce_transfer(gens, image_to_tensor(s.image),
                                 image_to_tensor(d.image));
    me.mae_rec.push_back(mae(tensor_to_image(ts.i_x_rec->value), s.image));
    me.mae_cyc.push_back(mae(tensor_to_image(ts.i_x_cyc->value), s.image));
  }
  return me;
}

MethodEval method_from_images(const std::string& name,
                              std::vector<Image> pred_q) {
  MethodEval me;
  me.name = name;
  me.pred_q = std::move(pred_q);
  return me;
}

}  // namespace rsup
