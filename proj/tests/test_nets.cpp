#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rsup/checkpoint.hpp"
#include "rsup/nets.hpp"
#include "test_support.hpp"

using namespace rsup;
using rsup::test::randn;
namespace fs = std::filesystem;

namespace {

NetConfig small_cfg(int image_size) {
  NetConfig c;
  c.image_size = image_size;
  c.base_channels = 8;
  c.contrast_dim = 8;
  c.feature_channels = 8;
  c.seed = 4;
  return c;
}

Tensor image_input(int s, Rng& rng) { return randn({1, s, s}, rng, 0.5); }

}  // namespace

TEST_CASE("shape contracts hold for image_size in {32, 64, 128, 320}") {
  Rng rng(2);
  for (int s : {32, 64, 128, 320}) {
    CAPTURE(s);
    NetConfig cfg = small_cfg(s);
    GeneratorBundle g = make_generators(cfg);
    Var img = make_const(image_input(s, rng));

    Var contrast = g.e_c.forward(img);
    CHECK(contrast->value.shape() == std::vector<int>{cfg.contrast_dim});

    Var structure = g.e_s.forward(img);
    CHECK(structure->value.shape() ==
          std::vector<int>{cfg.feature_channels, s / 4, s / 4});
    Var bone_structure = g.e_b.forward(img);
    CHECK(bone_structure->value.shape() == structure->value.shape());

    Var q = g.g_q.forward(structure, contrast);
    CHECK(q->value.shape() == std::vector<int>{1, s, s});
    Var b = g.g_b.forward(bone_structure);
    CHECK(b->value.shape() == std::vector<int>{1, s, s});
    Var l = g.g_l.forward(structure);
    CHECK(l->value.shape() == std::vector<int>{1, s, s});

    double bmin = 2, bmax = -2, lmin = 2, lmax = -2;
    for (int64_t i = 0; i < b->value.size(); ++i) {
      bmin = std::min(bmin, b->value[i]);
      bmax = std::max(bmax, b->value[i]);
      lmin = std::min(lmin, l->value[i]);
      lmax = std::max(lmax, l->value[i]);
    }
    CHECK(bmin > -1.0);
    CHECK(bmax < 1.0);
    CHECK(lmin > 0.0);
    CHECK(lmax < 1.0);

    DiscriminatorBundle d = make_discriminators(cfg);
    Var patch = d.d_x.forward(img);
    CHECK(patch->value.shape() == std::vector<int>{1, s / 16, s / 16});
  }
}

TEST_CASE("paper-scale configuration shapes (320x320, 256 channels)") {
  NetConfig cfg;
  cfg.image_size = 320;
  cfg.base_channels = 8;  // contracts under test are shape-only
  cfg.contrast_dim = 256;
  cfg.feature_channels = 256;
  GeneratorBundle g = make_generators(cfg);
  Rng rng(3);
  Var img = make_const(image_input(320, rng));
  CHECK(g.e_c.forward(img)->value.shape() == std::vector<int>{256});
  CHECK(g.e_s.forward(img)->value.shape() == std::vector<int>{256, 80, 80});
}

TEST_CASE("encoders are deterministic and E_S differs from E_B") {
  NetConfig cfg = small_cfg(32);
  GeneratorBundle g = make_generators(cfg);
  Rng rng(5);
  Tensor in = image_input(32, rng);
  Var a = g.e_s.forward(make_const(in));
  Var b = g.e_s.forward(make_const(in));
  for (int64_t i = 0; i < a->value.size(); ++i) CHECK(a->value[i] == b->value[i]);
  Var c = g.e_b.forward(make_const(in));
  double diff = 0.0;
  for (int64_t i = 0; i < a->value.size(); ++i)
    diff = std::max(diff, std::fabs(a->value[i] - c->value[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("demod block: unit-norm weights; zero style = normalized conv") {
  NetConfig cfg = small_cfg(32);
  GeneratorBundle g = make_generators(cfg);
  Rng rng(6);
  const DemodBlock& blk = g.g_q.blocks[0];
  Var style = make_const(randn({cfg.contrast_dim}, rng, 0.5));

  Var scale = blk.affine.forward(style);
  Var wd = demod_out(scale_in_channels(blk.w, scale));
  const int o = wd->value.dim(0);
  const int64_t m = wd->value.size() / o;
  for (int oc = 0; oc < o; ++oc) {
    double n2 = 0.0;
    for (int64_t k = 0; k < m; ++k)
      n2 += wd->value[oc * m + k] * wd->value[oc * m + k];
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-5));
  }

  // Zero style with the affine bias at 1: the block reduces to a plain conv
  // with per-output-channel weight-normalized kernels.
  Tensor zero_style = Tensor::zeros({cfg.contrast_dim});
  Var structure = make_const(randn({cfg.feature_channels, 8, 8}, rng));
  Var out = blk.forward(structure, make_const(zero_style));

  Tensor wn = blk.w->value;  // direct normalized-convolution oracle
  for (int oc = 0; oc < wn.dim(0); ++oc) {
    double n2 = 1e-8;
    for (int64_t k = 0; k < m; ++k) n2 += wn[oc * m + k] * wn[oc * m + k];
    const double inv = 1.0 / std::sqrt(n2);
    for (int64_t k = 0; k < m; ++k) wn[oc * m + k] *= inv;
  }
  Var oracle = conv2d(structure, make_const(wn), blk.b, 1, 1);
  for (int64_t i = 0; i < out->value.size(); ++i)
    CHECK(out->value[i] == doctest::Approx(oracle->value[i]).epsilon(1e-9));

  CHECK(out->value.dim(1) == structure->value.dim(1));
  CHECK(out->value.dim(2) == structure->value.dim(2));
}

TEST_CASE("styled decoder resolutions and additive skip composition") {
  NetConfig cfg = small_cfg(64);
  GeneratorBundle g = make_generators(cfg);
  Rng rng(7);
  Var structure = make_const(randn({cfg.feature_channels, 16, 16}, rng, 0.3));
  Var contrast = make_const(randn({cfg.contrast_dim}, rng, 0.3));

  Var full = g.g_q.forward(structure, contrast);
  CHECK(full->value.shape() == std::vector<int>{1, 64, 64});

  // Zeroing the two low-resolution to-image branches must leave exactly the
  // stage-3 image: the merge is a plain upsample-and-add chain.
  StyledDecoder zeroed = g.g_q;
  Tensor w0 = zeroed.to_img[0].w->value;
  Tensor b0 = zeroed.to_img[0].b->value;
  Tensor w1 = zeroed.to_img[1].w->value;
  Tensor b1 = zeroed.to_img[1].b->value;
  zeroed.to_img[0].w->value.fill(0.0);
  zeroed.to_img[0].b->value.fill(0.0);
  zeroed.to_img[1].w->value.fill(0.0);
  zeroed.to_img[1].b->value.fill(0.0);
  Var stage3_only = zeroed.forward(structure, contrast);
  zeroed.to_img[0].w->value = w0;
  zeroed.to_img[0].b->value = b0;
  zeroed.to_img[1].w->value = w1;
  zeroed.to_img[1].b->value = b1;

  // oracle: final = stage-3 image alone once the low-res branches are gone
  Var feat1 = relu(g.g_q.blocks[0].forward(structure, contrast));
  Var feat2 = relu(g.g_q.blocks[1].forward(upsample2(feat1), contrast));
  Var feat3 = relu(g.g_q.blocks[2].forward(upsample2(feat2), contrast));
  Var img3 = g.g_q.to_img[2].forward(feat3);
  for (int64_t i = 0; i < img3->value.size(); ++i)
    CHECK(stage3_only->value[i] ==
          doctest::Approx(img3->value[i]).epsilon(1e-12));

  // intermediate feature resolutions are 16, 32, 64
  CHECK(feat1->value.dim(1) == 16);
  CHECK(feat2->value.dim(1) == 32);
  CHECK(feat3->value.dim(1) == 64);

  CHECK_THROWS(
      g.g_q.forward(make_const(randn({cfg.feature_channels, 8, 8}, rng)),
                    contrast));
}

TEST_CASE("discriminator patch maps and sensitivity") {
  NetConfig cfg = small_cfg(64);
  DiscriminatorBundle d = make_discriminators(cfg);
  Rng rng(8);
  Tensor in = image_input(64, rng);
  Var p1 = d.d_x.forward(make_const(in));
  CHECK(p1->value.shape() == std::vector<int>{1, 4, 4});

  Tensor doubled = in;
  for (int64_t i = 0; i < doubled.size(); ++i) doubled[i] *= 2.0;
  Var p2 = d.d_x.forward(make_const(doubled));
  double diff = 0.0;
  for (int64_t i = 0; i < p1->value.size(); ++i)
    diff = std::max(diff, std::fabs(p1->value[i] - p2->value[i]));
  CHECK(diff > 0.0);

  // the gradient discriminator takes stacked 2-channel input
  Var pg = d.d_grad.forward(make_const(randn({2, 64, 64}, rng)));
  CHECK(pg->value.shape() == std::vector<int>{1, 4, 4});

  CHECK_THROWS_AS(d.d_x.forward(make_const(randn({1, 8, 8}, rng))),
                  std::invalid_argument);
}

TEST_CASE("checkpoint round trip: bitwise parameters, identical forwards") {
  NetConfig cfg = small_cfg(32);
  GeneratorBundle g = make_generators(cfg);
  Rng rng(9);
  // nudge parameters off their init so the round trip is non-trivial
  for (auto& [name, p] : g.params.items) {
    for (int64_t i = 0; i < p->value.size(); ++i)
      p->value[i] += 0.01 * rng.normal();
    p->value.quantize_f32();
  }

  CheckpointData data;
  data.cfg = cfg;
  data.meta["stage"] = "init";
  for (const auto& [n, v] : g.params.items)
    data.tensors.emplace_back("gen." + n, v->value);

  const fs::path path = fs::temp_directory_path() / "ribsup_ckpt_test.ckpt";
  save_checkpoint(path.string(), data);
  CheckpointData back = load_checkpoint(path.string());

  CHECK(back.cfg == cfg);
  CHECK(back.meta.at("stage") == "init");
  for (const auto& [n, v] : g.params.items) {
    const Tensor* t = back.find_tensor("gen." + n);
    REQUIRE(t != nullptr);
    REQUIRE(t->size() == v->value.size());
    for (int64_t i = 0; i < t->size(); ++i) CHECK((*t)[i] == v->value[i]);
  }

  // forward equality through a rebuilt bundle
  GeneratorBundle g2 = make_generators(cfg);
  for (auto& [n, p] : g2.params.items) p->value = *back.find_tensor("gen." + n);
  Tensor in = image_input(32, rng);
  Var y1 = g.g_q.forward(g.e_s.forward(make_const(in)),
                         g.e_c.forward(make_const(in)));
  Var y2 = g2.g_q.forward(g2.e_s.forward(make_const(in)),
                          g2.e_c.forward(make_const(in)));
  for (int64_t i = 0; i < y1->value.size(); ++i)
    CHECK(y1->value[i] == y2->value[i]);

  // config mismatch errors spell out the differing fields
  NetConfig other = cfg;
  other.image_size = 64;
  other.contrast_dim = 16;
  try {
    back.require_compatible(other);
    FAIL("expected mismatch error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("image_size") != std::string::npos);
    CHECK(msg.find("contrast_dim") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("NetConfig validation") {
  NetConfig bad;
  bad.image_size = 30;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = NetConfig{};
  bad.contrast_dim = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter creation is deterministic for a fixed seed") {
  NetConfig cfg = small_cfg(32);
  GeneratorBundle a = make_generators(cfg);
  GeneratorBundle b = make_generators(cfg);
  REQUIRE(a.params.items.size() == b.params.items.size());
  for (size_t k = 0; k < a.params.items.size(); ++k) {
    CHECK(a.params.items[k].first == b.params.items[k].first);
    const Tensor& ta = a.params.items[k].second->value;
    const Tensor& tb = b.params.items[k].second->value;
    for (int64_t i = 0; i < ta.size(); ++i) CHECK(ta[i] == tb[i]);
  }
}
