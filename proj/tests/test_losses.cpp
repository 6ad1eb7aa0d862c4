#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rsup/losses.hpp"
#include "test_support.hpp"

using namespace rsup;
using rsup::test::gradcheck;
using rsup::test::randn;
using rsup::test::random_image;

TEST_CASE("l1 is the mean absolute difference") {
  Var x = make_const(randn({4, 4}, *(new Rng(1))));
  CHECK(l1(x, x)->value[0] == 0.0);

  Tensor a({2});
  a[0] = 0.0;
  a[1] = 1.0;
  Tensor b = Tensor::full({2}, 1.0);
  CHECK(l1(make_const(a), make_const(b))->value[0] == doctest::Approx(0.5));

  Rng rng(2);
  Tensor p = randn({5, 7}, rng), q = randn({5, 7}, rng);
  double oracle = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) oracle += std::fabs(p[i] - q[i]);
  oracle /= p.size();
  CHECK(l1(make_const(p), make_const(q))->value[0] ==
        doctest::Approx(oracle).epsilon(1e-7));

  CHECK_THROWS_AS(l1(make_const(p), make_const(Tensor::zeros({3, 3}))),
                  std::invalid_argument);
}

TEST_CASE("supervised loss: three L1 terms") {
  Rng rng(3);
  Tensor q = randn({1, 6, 6}, rng), r = randn({1, 6, 6}, rng),
         b = randn({1, 6, 6}, rng);
  // perfect prediction
  CHECK(loss_supervised(make_const(q), make_const(r), make_const(b), q, r, b)
            ->value[0] == 0.0);
  // only Q off by a constant c -> c
  Tensor q_off = q;
  for (int64_t i = 0; i < q_off.size(); ++i) q_off[i] += 0.37;
  CHECK(loss_supervised(make_const(q_off), make_const(r), make_const(b), q, r, b)
            ->value[0] == doctest::Approx(0.37).epsilon(1e-9));
  // random tensors against the three-term oracle
  Tensor qp = randn({1, 6, 6}, rng), rp = randn({1, 6, 6}, rng),
         bp = randn({1, 6, 6}, rng);
  double oracle = 0.0;
  for (int64_t i = 0; i < q.size(); ++i)
    oracle += std::fabs(qp[i] - q[i]) + std::fabs(rp[i] - r[i]) +
              std::fabs(bp[i] - b[i]);
  oracle /= q.size();
  CHECK(loss_supervised(make_const(qp), make_const(rp), make_const(bp), q, r, b)
            ->value[0] == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("least-squares adversarial targets") {
  Tensor ones = Tensor::full({1, 3, 3}, 1.0);
  Tensor zeros = Tensor::zeros({1, 3, 3});
  CHECK(loss_adversarial(make_const(ones), AdvRole::kDReal)->value[0] == 0.0);
  CHECK(loss_adversarial(make_const(zeros), AdvRole::kDFake)->value[0] == 0.0);
  CHECK(loss_adversarial(make_const(ones), AdvRole::kGen)->value[0] == 0.0);

  Rng rng(4);
  Tensor p = randn({1, 4, 4}, rng);
  double o_real = 0.0, o_fake = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) {
    o_real += (p[i] - 1.0) * (p[i] - 1.0);
    o_fake += p[i] * p[i];
  }
  o_real /= p.size();
  o_fake /= p.size();
  CHECK(loss_adversarial(make_const(p), AdvRole::kDReal)->value[0] ==
        doctest::Approx(o_real).epsilon(1e-12));
  CHECK(loss_adversarial(make_const(p), AdvRole::kDFake)->value[0] ==
        doctest::Approx(o_fake).epsilon(1e-12));
}

TEST_CASE("feature consistency: two contrast terms, four structure terms") {
  Rng rng(5);
  Tensor cx = randn({6}, rng), cd = randn({6}, rng);
  Tensor sx = randn({2, 3, 3}, rng), sd = randn({2, 3, 3}, rng);
  Tensor bx = randn({2, 3, 3}, rng), bd = randn({2, 3, 3}, rng);

  SUBCASE("transfers identical to sources vanish") {
    auto fc = loss_feature_consistency(
        make_const(cx), make_const(cd), make_const(cx), make_const(cd),
        make_const(sx), make_const(sd), make_const(sx), make_const(sd),
        make_const(bx), make_const(bd), make_const(bx), make_const(bd));
    CHECK(fc.l_c->value[0] == 0.0);
    CHECK(fc.l_s->value[0] == 0.0);
  }
  SUBCASE("random features match the summation oracle") {
    Tensor c_dx = randn({6}, rng), c_xd = randn({6}, rng);
    Tensor s_xd = randn({2, 3, 3}, rng), s_dx = randn({2, 3, 3}, rng);
    Tensor b_xd = randn({2, 3, 3}, rng), b_dx = randn({2, 3, 3}, rng);
    auto fc = loss_feature_consistency(
        make_const(cx), make_const(cd), make_const(c_dx), make_const(c_xd),
        make_const(sx), make_const(sd), make_const(s_xd), make_const(s_dx),
        make_const(bx), make_const(bd), make_const(b_xd), make_const(b_dx));
    auto l1o = [](const Tensor& a, const Tensor& b) {
      double s = 0.0;
      for (int64_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
      return s / a.size();
    };
    CHECK(fc.l_c->value[0] ==
          doctest::Approx(l1o(cx, c_dx) + l1o(cd, c_xd)).epsilon(1e-12));
    CHECK(fc.l_s->value[0] == doctest::Approx(l1o(sx, s_xd) + l1o(sd, s_dx) +
                                              l1o(bx, b_xd) + l1o(bd, b_dx))
                                  .epsilon(1e-12));
  }
}

TEST_CASE("reconstruction and cycle losses") {
  Rng rng(6);
  Tensor ix = randn({1, 5, 5}, rng), id = randn({1, 5, 5}, rng);
  auto rc = loss_rec_cyc(make_const(ix), ix, make_const(id), id, make_const(ix),
                         make_const(id));
  CHECK(rc.l_rec->value[0] == 0.0);
  CHECK(rc.l_cyc->value[0] == 0.0);

  // an error in one domain isolates to that term
  Tensor ix_off = ix;
  for (int64_t i = 0; i < ix_off.size(); ++i) ix_off[i] += 0.25;
  auto rc2 = loss_rec_cyc(make_const(ix_off), ix, make_const(id), id,
                          make_const(ix), make_const(id));
  CHECK(rc2.l_rec->value[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(rc2.l_cyc->value[0] == 0.0);
}

TEST_CASE("bilateral filter matches the brute-force double-loop oracle") {
  Rng rng(7);
  BoneMaskConfig cfg;
  cfg.sigma_spatial = 1.5;
  cfg.sigma_range = 0.2;
  cfg.kernel_radius = 3;

  // step image plus noise
  Image img(12, 12);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      img.at(i, j) = (j < 6 ? -0.5f : 0.5f) + 0.05f * (float)rng.normal();

  Image out = bilateral_filter(img, cfg);
  const int r = cfg.kernel_radius;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) {
      double acc = 0.0, wsum = 0.0;
      for (int di = -r; di <= r; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= 12 || jj < 0 || jj >= 12) continue;
          const double ds = di * di + dj * dj;
          const double dv = img.at(ii, jj) - img.at(i, j);
          const double w =
              std::exp(-ds / (2 * cfg.sigma_spatial * cfg.sigma_spatial)) *
              std::exp(-dv * dv / (2 * cfg.sigma_range * cfg.sigma_range));
          acc += w * img.at(ii, jj);
          wsum += w;
        }
      CHECK(out.at(i, j) == doctest::Approx(acc / wsum).epsilon(1e-6));
    }

  SUBCASE("constant image is a fixed point; threshold splits on theta") {
    Image flat(8, 8);
    for (auto& x : flat.v) x = 0.3f;
    BoneMaskConfig c2;
    Image f = bilateral_filter(flat, c2);
    for (auto x : f.v) CHECK(x == doctest::Approx(0.3f).epsilon(1e-6));
    // flat input has no dynamic range: bone_mask treats it as background
    Image m = bone_mask(flat, c2);
    for (auto x : m.v) CHECK(x == 0.0f);
  }
  SUBCASE("config validation") {
    BoneMaskConfig bad;
    bad.kernel_radius = 2;  // < ceil(2*sigma_spatial)=6
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = BoneMaskConfig{};
    bad.sigma_range = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("bone_mask marks the bright half of a bimodal prediction") {
  Image bone(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) bone.at(i, j) = i < 8 ? -0.8f : 0.6f;
  BoneMaskConfig cfg;
  cfg.sigma_spatial = 1.0;
  cfg.kernel_radius = 2;
  Image m = bone_mask(bone, cfg);
  int64_t top = 0, bottom = 0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) (i < 8 ? top : bottom) += m.at(i, j) > 0.5f;
  CHECK(top == 0);
  CHECK(bottom == 8 * 16);
}

TEST_CASE("inter and Laplacian losses with mask partitions") {
  Rng rng(8);
  const int n = 10;
  Tensor r = randn({1, n, n}, rng);
  Image bone(n, n), lung(n, n);
  for (int64_t i = 0; i < bone.size(); ++i) {
    bone.v[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
    lung.v[i] = rng.uniform() < 0.6 ? 1.0f : 0.0f;
  }

  SUBCASE("zero residual gives zero loss") {
    CHECK(loss_inter(make_const(Tensor::zeros({1, n, n})), bone, lung)
              ->value[0] == 0.0);
  }
  SUBCASE("full masks leave an empty inter region") {
    Image ones(n, n);
    for (auto& x : ones.v) x = 1.0f;
    CHECK(loss_inter(make_const(r), ones, ones)->value[0] == 0.0);
  }
  SUBCASE("masked-sum oracle") {
    double oracle = 0.0;
    for (int64_t i = 0; i < r.size(); ++i) {
      const double u = std::max(1.0 - bone.v[i], 1.0 - lung.v[i]);
      oracle += std::fabs(r[i] * u);
    }
    oracle /= r.size();
    CHECK(loss_inter(make_const(r), bone, lung)->value[0] ==
          doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("partition: restricted + complementary contribution = full L1") {
    const double inter = loss_inter(make_const(r), bone, lung)->value[0];
    double inside = 0.0;  // |R| over the intersection region bone AND lung
    for (int64_t i = 0; i < r.size(); ++i)
      if (bone.v[i] > 0.5f && lung.v[i] > 0.5f) inside += std::fabs(r[i]);
    inside /= r.size();
    const double full = l1(make_const(r), make_const(Tensor::zeros({1, n, n})))
                            ->value[0];
    CHECK(inter + inside == doctest::Approx(full).epsilon(1e-9));
  }
  SUBCASE("linear ramp has zero Laplacian loss in the interior") {
    Tensor ramp({1, n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) ramp.at(0, i, j) = 0.3 * i;
    Image interior(n, n);
    for (int i = 2; i < n - 2; ++i)
      for (int j = 2; j < n - 2; ++j) interior.at(i, j) = 1.0f;
    Image zeros(n, n);
    CHECK(loss_laplace(make_const(ramp), interior, zeros)->value[0] ==
          doctest::Approx(0.0));
  }
  SUBCASE("zero masks kill the Laplacian loss") {
    Image zeros(n, n);
    CHECK(loss_laplace(make_const(r), zeros, zeros)->value[0] == 0.0);
  }
}

TEST_CASE("total_loss arithmetic at the published weights") {
  LossWeights w;
  std::vector<std::pair<std::string, double>> ones = {
      {"L_su", 1.0},  {"L_D_adv", 1.0}, {"L_G_adv", 1.0}, {"L_c", 1.0},
      {"L_s", 1.0},   {"L_rec", 1.0},   {"L_cyc", 1.0},   {"L_D_grad", 1.0},
      {"L_G_grad", 1.0}, {"L_inter", 1.0}, {"L_lap", 1.0}};

  LossReport init = total_loss(TrainStage::kInit, ones, w);
  CHECK(init.total_g == doctest::Approx(24.0));  // 1 + 1 + 2 + 20
  CHECK(init.total_d == doctest::Approx(1.0));

  LossReport fine = total_loss(TrainStage::kFine, ones, w);
  CHECK(fine.total_g == doctest::Approx(24.0 + 10.0 + 500.0 + 1.0));
  CHECK(fine.total_d == doctest::Approx(1.0 + 10.0));

  std::vector<std::pair<std::string, double>> zeros = ones;
  for (auto& [k, v] : zeros) v = 0.0;
  CHECK(total_loss(TrainStage::kFine, zeros, w).total_g == 0.0);

  // weighted-sum consistency within 1e-6
  Rng rng(11);
  std::vector<std::pair<std::string, double>> parts = ones;
  for (auto& [k, v] : parts) v = rng.uniform();
  LossReport rep = total_loss(TrainStage::kFine, parts, w);
  double expect = rep.get("L_su") + w.lambda_adv * rep.get("L_G_adv") +
                  w.lambda_f * (rep.get("L_c") + rep.get("L_s")) +
                  w.lambda_i * (rep.get("L_rec") + rep.get("L_cyc")) +
                  w.lambda_grad * rep.get("L_G_grad") +
                  w.lambda_inter * rep.get("L_inter") +
                  w.lambda_lap * rep.get("L_lap");
  CHECK(std::fabs(rep.total_g - expect) < 1e-6);

  // missing fine-stage part
  std::vector<std::pair<std::string, double>> partial(ones.begin(),
                                                      ones.begin() + 7);
  CHECK_NOTHROW(total_loss(TrainStage::kInit, partial, w));
  CHECK_THROWS_AS(total_loss(TrainStage::kFine, partial, w),
                  std::invalid_argument);
}

TEST_CASE("every loss is nonnegative and zero on its exact-match input") {
  Rng rng(12);
  Tensor a = randn({1, 8, 8}, rng);
  CHECK(l1(make_const(a), make_const(a))->value[0] == 0.0);
  Tensor ones_patch = Tensor::full({1, 2, 2}, 1.0);
  CHECK(loss_adversarial(make_const(ones_patch), AdvRole::kGen)->value[0] == 0.0);
  Tensor b = randn({1, 8, 8}, rng);
  CHECK(l1(make_const(a), make_const(b))->value[0] >= 0.0);
}

TEST_CASE("gradients of the array-input losses match finite differences") {
  Rng rng(13);
  const int n = 16;
  Var r = make_param(randn({1, n, n}, rng, 0.5));
  Var q = make_param(randn({1, n, n}, rng, 0.5));
  Tensor truth = randn({1, n, n}, rng, 0.5);
  Image bone = rsup::test::random_image(n, n, rng, 0, 1);
  Image lung = rsup::test::random_image(n, n, rng, 0, 1);
  for (auto& x : bone.v) x = x > 0.5f ? 1.0f : 0.0f;
  for (auto& x : lung.v) x = x > 0.5f ? 1.0f : 0.0f;

  auto f1 = [&] { return l1(r, make_const(truth)); };
  CHECK(gradcheck(f1, {r}, rng, 8) < 1e-3);
  auto f2 = [&] { return loss_inter(r, bone, lung); };
  CHECK(gradcheck(f2, {r}, rng, 8) < 1e-3);
  auto f3 = [&] { return loss_laplace(r, bone, lung); };
  CHECK(gradcheck(f3, {r}, rng, 8) < 1e-3);
  auto f4 = [&] {
    return add(loss_adversarial(q, AdvRole::kGen),
               loss_adversarial(r, AdvRole::kDFake));
  };
  CHECK(gradcheck(f4, {q, r}, rng, 8) < 1e-3);
}

TEST_CASE("binarize_at thresholds at one half") {
  Tensor soft({4});
  soft[0] = 0.2;
  soft[1] = 0.5;
  soft[2] = 0.51;
  soft[3] = 0.9;
  Tensor b = binarize_at(soft);
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 0.0);
  CHECK(b[2] == 1.0);
  CHECK(b[3] == 1.0);
}
