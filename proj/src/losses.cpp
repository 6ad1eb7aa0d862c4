#include "rsup/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rsup {

void LossWeights::validate() const {
  if (lambda_adv < 0 || lambda_f < 0 || lambda_i < 0 || lambda_grad < 0 ||
      lambda_inter < 0 || lambda_lap < 0)
    throw std::invalid_argument("LossWeights: weights must be >= 0");
}

void BoneMaskConfig::validate() const {
  if (sigma_spatial <= 0 || sigma_range <= 0)
    throw std::invalid_argument("BoneMaskConfig: sigmas must be > 0");
  if (theta_thresh <= -1.0 || theta_thresh >= 1.0)
    throw std::invalid_argument("BoneMaskConfig: theta_thresh must be in (-1,1)");
  if (kernel_radius < (int)std::ceil(2.0 * sigma_spatial))
    throw std::invalid_argument(
        "BoneMaskConfig: kernel_radius must be >= ceil(2*sigma_spatial)");
}

bool LossReport::has(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return true;
  return false;
}

double LossReport::get(const std::string& name) const {
  for (const auto& [k, v] : terms)
    if (k == name) return v;
  throw std::out_of_range("LossReport: no term " + name);
}

void LossReport::set(const std::string& name, double v) {
  for (auto& [k, old] : terms)
    if (k == name) {
      old = v;
      return;
    }
  terms.emplace_back(name, v);
}

std::string LossReport::log_line(int64_t iter, TrainStage stage) const {
  std::string s = "iter=" + std::to_string(iter);
  s += stage == TrainStage::kInit ? " stage=init" : " stage=fine";
  char buf[64];
  for (const auto& [k, v] : terms) {
    std::snprintf(buf, sizeof(buf), " %s=%.9g", k.c_str(), v);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf), " total_G=%.9g total_D=%.9g", total_g, total_d);
  s += buf;
  return s;
}

Var l1(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument("l1: shape mismatch");
  return mean_all(abs_v(sub(a, b)));
}

Var loss_supervised(const Var& q_pred, const Var& r_pred, const Var& b_pred,
                    const Tensor& q_true, const Tensor& r_true,
                    const Tensor& b_true) {
  Var l = l1(q_pred, make_const(q_true));
  l = add(l, l1(r_pred, make_const(r_true)));
  return add(l, l1(b_pred, make_const(b_true)));
}

Var loss_adversarial(const Var& patch, AdvRole role) {
  if (patch->value.size() == 0)
    throw std::invalid_argument("loss_adversarial: empty patch map");
  switch (role) {
    case AdvRole::kDReal: return mse_to(patch, 1.0);
    case AdvRole::kDFake: return mse_to(patch, 0.0);
    case AdvRole::kGen: return mse_to(patch, 1.0);
  }
  throw std::logic_error("unreachable");
}

FeatureConsistency loss_feature_consistency(
    const Var& c_x, const Var& c_d, const Var& c_of_dx, const Var& c_of_xd,
    const Var& s_x, const Var& s_d, const Var& s_of_xd, const Var& s_of_dx,
    const Var& b_x, const Var& b_d, const Var& b_of_xd, const Var& b_of_dx) {
  FeatureConsistency fc;
  // Contrast stays fixed within each domain: E_C(I_x) vs E_C(I'_{d->x}).
  fc.l_c = add(l1(c_x, c_of_dx), l1(c_d, c_of_xd));
  // Structure survives the contrast swap: E_S/E_B of I vs of the transfer.
  Var ls = add(l1(s_x, s_of_xd), l1(s_d, s_of_dx));
  ls = add(ls, l1(b_x, b_of_xd));
  fc.l_s = add(ls, l1(b_d, b_of_dx));
  return fc;
}

RecCyc loss_rec_cyc(const Var& ix_rec, const Tensor& ix, const Var& id_rec,
                    const Tensor& id, const Var& ix_cyc, const Var& id_cyc) {
  RecCyc rc;
  rc.l_rec = add(l1(ix_rec, make_const(ix)), l1(id_rec, make_const(id)));
  rc.l_cyc = add(l1(ix_cyc, make_const(ix)), l1(id_cyc, make_const(id)));
  return rc;
}

Image bilateral_filter(const Image& img, const BoneMaskConfig& cfg) {
  cfg.validate();
  const int r = cfg.kernel_radius;
  const double inv2ss = 1.0 / (2.0 * cfg.sigma_spatial * cfg.sigma_spatial);
  const double inv2sr = 1.0 / (2.0 * cfg.sigma_range * cfg.sigma_range);
  std::vector<double> spatial((2 * r + 1) * (2 * r + 1));
  for (int di = -r; di <= r; ++di)
    for (int dj = -r; dj <= r; ++dj)
      spatial[(di + r) * (2 * r + 1) + dj + r] =
          std::exp(-(di * di + dj * dj) * inv2ss);

  Image out(img.h, img.w);
  for (int i = 0; i < img.h; ++i)
    for (int j = 0; j < img.w; ++j) {
      const double center = img.at(i, j);
      double acc = 0.0, wsum = 0.0;
      for (int di = -r; di <= r; ++di) {
        const int ii = i + di;
        if (ii < 0 || ii >= img.h) continue;
        for (int dj = -r; dj <= r; ++dj) {
          const int jj = j + dj;
          if (jj < 0 || jj >= img.w) continue;
          const double dv = img.at(ii, jj) - center;
          const double w = spatial[(di + r) * (2 * r + 1) + dj + r] *
                           std::exp(-dv * dv * inv2sr);
          acc += w * img.at(ii, jj);
          wsum += w;
        }
      }
      out.at(i, j) = (float)(acc / wsum);
    }
  return out;
}

Image bone_mask(const Image& bone_pred, const BoneMaskConfig& cfg) {
  cfg.validate();
  // Rescale to [-1,1] so theta_thresh splits the prediction's own dynamic
  // range; a flat prediction has no foreground.
  Image scaled = normalize_minmax_pm1(bone_pred, bone_pred, -1.0f);
  float mn = bone_pred.v[0], mx = bone_pred.v[0];
  for (float x : bone_pred.v) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
  }
  Image out(bone_pred.h, bone_pred.w);
  if (mx - mn < 1e-12f) return out;
  Image filtered = bilateral_filter(scaled, cfg);
  for (int64_t i = 0; i < filtered.size(); ++i)
    out.v[i] = filtered.v[i] > cfg.theta_thresh ? 1.0f : 0.0f;
  return out;
}

namespace {
Tensor union_mask(const Image& a, const Image& b, bool complement) {
  if (!a.same_shape(b))
    throw std::invalid_argument("loss mask shape mismatch");
  Tensor m({1, a.h, a.w});
  for (int64_t i = 0; i < a.size(); ++i) {
    const double av = complement ? 1.0 - a.v[i] : a.v[i];
    const double bv = complement ? 1.0 - b.v[i] : b.v[i];
    m[i] = std::max(av, bv);
  }
  return m;
}
}  // namespace

Var loss_inter(const Var& r_pred, const Image& bone_mask_img,
               const Image& lung_mask_img) {
  Tensor m = union_mask(bone_mask_img, lung_mask_img, /*complement=*/true);
  if (r_pred->value.size() != m.size())
    throw std::invalid_argument("loss_inter: shape mismatch");
  return mean_all(abs_v(mul_mask(r_pred, m)));
}

Var loss_laplace(const Var& r_pred, const Image& bone_mask_img,
                 const Image& lung_mask_img) {
  Tensor m = union_mask(bone_mask_img, lung_mask_img, /*complement=*/false);
  if (r_pred->value.size() != m.size())
    throw std::invalid_argument("loss_laplace: shape mismatch");
  return mean_all(abs_v(mul_mask(laplacian_map(r_pred), m)));
}

Tensor binarize_at(const Tensor& soft, double thresh) {
  Tensor out = soft;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > thresh ? 1.0 : 0.0;
  return out;
}

LossReport total_loss(TrainStage stage,
                      const std::vector<std::pair<std::string, double>>& parts,
                      const LossWeights& weights) {
  weights.validate();
  LossReport rep;
  rep.terms = parts;
  auto need = [&](const char* name) {
    for (const auto& [k, v] : parts)
      if (k == name) return v;
    throw std::invalid_argument(std::string("total_loss: missing part ") + name +
                                " for this stage");
  };
  rep.total_g = need("L_su") + weights.lambda_adv * need("L_G_adv") +
                weights.lambda_f * (need("L_c") + need("L_s")) +
                weights.lambda_i * (need("L_rec") + need("L_cyc"));
  rep.total_d = weights.lambda_adv * need("L_D_adv");
  if (stage == TrainStage::kFine) {
    rep.total_g += weights.lambda_grad * need("L_G_grad") +
                   weights.lambda_inter * need("L_inter") +
                   weights.lambda_lap * need("L_lap");
    rep.total_d += weights.lambda_grad * need("L_D_grad");
  }
  return rep;
}

}  // namespace rsup
