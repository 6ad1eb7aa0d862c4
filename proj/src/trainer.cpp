#include "rsup/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace fs = std::filesystem;

namespace rsup {

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kFull: return "full";
    case TrainMode::kNRM: return "nRM";
    case TrainMode::kRM: return "RM";
    case TrainMode::kRMDA: return "RMDA";
  }
  throw std::logic_error("unreachable");
}

TrainMode mode_from_name(const std::string& s) {
  if (s == "full") return TrainMode::kFull;
  if (s == "nRM") return TrainMode::kNRM;
  if (s == "RM") return TrainMode::kRM;
  if (s == "RMDA") return TrainMode::kRMDA;
  throw std::invalid_argument("unknown training mode: " + s);
}

void TrainConfig::validate() const {
  if (iters_init < 0 || iters_fine < 0 || pretrain_iters < 0)
    throw std::invalid_argument("TrainConfig: iteration counts must be >= 0");
  if (lr <= 0) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (batch_size != 1)
    throw std::invalid_argument("TrainConfig: only batch_size 1 is supported");
  weights.validate();
  net.validate();
  bone_mask.validate();
}

double TransferSet::decomposition_deviation() const {
  double dev = 0.0;
  auto measure = [&dev](const Var& i, const Var& q, const Var& r) {
    if (!i || !q || !r) return;
    for (int64_t k = 0; k < i->value.size(); ++k)
      dev = std::max(dev,
                     std::fabs(i->value[k] - (q->value[k] + r->value[k])));
  };
  measure(i_x_rec, q_x, r_x);
  measure(i_d_rec, q_d, r_d);
  return dev;
}

TransferSet ce_transfer(const GeneratorBundle& gens, const Tensor& image_x,
                        const Tensor& image_d, const TransferOptions& opts) {
  if (!(image_x.rank() == 3 && image_x.dim(0) == 1))
    throw std::invalid_argument("ce_transfer: images must be (1,H,W)");
  if (!(image_x.shape() == image_d.shape()))
    throw std::invalid_argument("ce_transfer: image shape mismatch");

  TransferSet ts;
  ts.in_x = image_x;
  ts.in_d = image_d;
  Var ix = make_const(image_x);
  Var id = make_const(image_d);

  ts.c_x = gens.e_c.forward(ix);
  ts.c_d = gens.e_c.forward(id);
  ts.s_x = gens.e_s.forward(ix);
  ts.s_d = gens.e_s.forward(id);
  ts.b_x = gens.e_b.forward(ix);
  ts.b_d = gens.e_b.forward(id);

  ts.q_x = gens.g_q.forward(ts.s_x, ts.c_x);
  ts.q_d = gens.g_q.forward(ts.s_d, ts.c_d);
  ts.r_x = gens.g_r.forward(ts.b_x, ts.c_x);
  ts.r_d = gens.g_r.forward(ts.b_d, ts.c_d);
  ts.i_x_rec = add(ts.q_x, ts.r_x);
  ts.i_d_rec = add(ts.q_d, ts.r_d);

  if (opts.bones) {
    ts.bone_x = gens.g_b.forward(ts.b_x);
    ts.bone_d = gens.g_b.forward(ts.b_d);
  }
  if (opts.masks) {
    ts.lung_x = gens.g_l.forward(ts.s_x);
    ts.lung_d = gens.g_l.forward(ts.s_d);
  }

  if (opts.transfers) {
    ts.has_transfers = true;
    // Contrast comes from the target domain, structure from the source.
    ts.i_xd = add(gens.g_q.forward(ts.s_x, ts.c_d),
                  gens.g_r.forward(ts.b_x, ts.c_d));
    ts.q_dx = gens.g_q.forward(ts.s_d, ts.c_x);
    ts.i_dx = add(ts.q_dx, gens.g_r.forward(ts.b_d, ts.c_x));

    ts.c_of_xd = gens.e_c.forward(ts.i_xd);
    ts.c_of_dx = gens.e_c.forward(ts.i_dx);
    ts.s_of_xd = gens.e_s.forward(ts.i_xd);
    ts.s_of_dx = gens.e_s.forward(ts.i_dx);
    ts.b_of_xd = gens.e_b.forward(ts.i_xd);
    ts.b_of_dx = gens.e_b.forward(ts.i_dx);

    ts.i_x_cyc = add(gens.g_q.forward(ts.s_of_xd, ts.c_of_dx),
                     gens.g_r.forward(ts.b_of_xd, ts.c_of_dx));
    ts.i_d_cyc = add(gens.g_q.forward(ts.s_of_dx, ts.c_of_xd),
                     gens.g_r.forward(ts.b_of_dx, ts.c_of_xd));
  }
  return ts;
}

namespace {

std::vector<std::string> generator_param_names(const GeneratorBundle& gens,
                                               TrainMode mode) {
  std::vector<std::string> prefixes;
  if (mode == TrainMode::kNRM) {
    prefixes = {"e_c.", "e_s.", "g_q."};
  } else {
    // G_L is trained only by Dice pretraining and stays frozen here.
    prefixes = {"e_c.", "e_s.", "e_b.", "g_q.", "g_r.", "g_b."};
  }
  std::vector<std::string> names;
  for (const auto& [n, v] : gens.params.items)
    for (const auto& p : prefixes)
      if (n.rfind(p, 0) == 0) {
        names.push_back(n);
        break;
      }
  return names;
}

std::vector<Var> params_by_name(const ParamStore& ps,
                                const std::vector<std::string>& names) {
  std::vector<Var> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(ps.find(n));
  return out;
}

bool mode_has_discriminators(TrainMode m) {
  return m == TrainMode::kFull || m == TrainMode::kRMDA;
}

void check_finite(const char* name, const Var& v,
                  std::vector<std::pair<std::string, double>>& parts) {
  const double x = v->value[0];
  if (!std::isfinite(x)) throw TrainAbortError(name);
  parts.emplace_back(name, x);
}

Image tensor_plane_to_image(const Tensor& t) { return tensor_to_image(t); }

}  // namespace

TrainState make_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  st.gens = make_generators(cfg.net);
  st.opt_g_names = generator_param_names(st.gens, cfg.mode);
  st.opt_g = Adam(params_by_name(st.gens.params, st.opt_g_names), cfg.lr);
  if (mode_has_discriminators(cfg.mode)) {
    st.discs = make_discriminators(cfg.net);
    for (const auto& [n, v] : st.discs->params.items) st.opt_d_names.push_back(n);
    st.opt_d = Adam(st.discs->params.all(), cfg.lr);
  }
  Rng root(cfg.seed ^ 0x747261696e6572ULL);
  st.rng_drr = root.split();
  st.rng_cxr = root.split();
  st.rng_noise = root.split();
  return st;
}

TrainStage stage_for_iter(const TrainConfig& cfg, int64_t iter) {
  if (cfg.mode == TrainMode::kFull && iter >= cfg.iters_init)
    return TrainStage::kFine;
  return TrainStage::kInit;
}

int64_t total_iters(const TrainConfig& cfg) {
  return cfg.mode == TrainMode::kFull ? cfg.iters_init + cfg.iters_fine
                                      : cfg.iters_init;
}

LossReport train_step(TrainState& st, const DrrSample& drr,
                      const PseudoCxrSample& cxr, TrainStage stage) {
  const TrainConfig& cfg = st.cfg;
  const LossWeights& w = cfg.weights;
  const Tensor ix = image_to_tensor(cxr.image);
  const Tensor id = image_to_tensor(drr.image);
  const Tensor q_true = image_to_tensor(drr.suppressed);
  const Tensor r_true = image_to_tensor(drr.residual);
  const Tensor b_true = image_to_tensor(drr.bone);

  std::vector<std::pair<std::string, double>> parts;
  LossReport rep;

  if (cfg.mode == TrainMode::kNRM) {
    // Rib-suppressed DRR predicted directly from G_Q; nothing else trains.
    Var q_d = st.gens.g_q.forward(st.gens.e_s.forward(make_const(id)),
                                  st.gens.e_c.forward(make_const(id)));
    Var loss = l1(q_d, make_const(q_true));
    check_finite("L_nRM", loss, parts);
    st.opt_g.zero_grad();
    backward(loss);
    st.opt_g.step();
    rep.terms = parts;
    rep.total_g = parts[0].second;
    return rep;
  }

  if (cfg.mode == TrainMode::kRM) {
    TransferOptions opts;
    opts.transfers = false;
    opts.masks = false;
    TransferSet ts = ce_transfer(st.gens, ix, id, opts);
    Var l_su = loss_supervised(ts.q_d, ts.r_d, ts.bone_d, q_true, r_true, b_true);
    Var l_rec = add(l1(ts.i_x_rec, make_const(ix)), l1(ts.i_d_rec, make_const(id)));
    Var total = add(l_su, mul_scalar(l_rec, w.lambda_i));
    check_finite("L_su", l_su, parts);
    check_finite("L_rec", l_rec, parts);
    st.opt_g.zero_grad();
    backward(total);
    st.opt_g.step();
    rep.terms = parts;
    rep.total_g = total->value[0];
    rep.decomp_dev = ts.decomposition_deviation();
    return rep;
  }

  // full / RMDA: adversarial two-player step on the shared forward pass.
  TransferSet ts = ce_transfer(st.gens, ix, id);
  DiscriminatorBundle& d = *st.discs;
  const bool fine = stage == TrainStage::kFine;

  Tensor lung_x_bin, lung_d_bin;
  Image lung_x_img, bone_mask_img;
  if (fine) {
    lung_x_bin = binarize_at(ts.lung_x->value);
    lung_d_bin = binarize_at(ts.lung_d->value);
    lung_x_img = tensor_plane_to_image(lung_x_bin);
    // B'_x is treated as a constant here: the bone path must not receive
    // gradients from the mask-based losses.
    bone_mask_img = bone_mask(tensor_plane_to_image(ts.bone_x->value),
                              cfg.bone_mask);
  }

  // --- discriminator update (generator outputs detached) ---
  {
    Var l_d_adv = loss_adversarial(d.d_x.forward(make_const(ix)), AdvRole::kDReal);
    l_d_adv = add(l_d_adv, loss_adversarial(d.d_x.forward(detach(ts.i_dx)),
                                            AdvRole::kDFake));
    l_d_adv = add(l_d_adv, loss_adversarial(d.d_d.forward(make_const(id)),
                                            AdvRole::kDReal));
    l_d_adv = add(l_d_adv, loss_adversarial(d.d_d.forward(detach(ts.i_xd)),
                                            AdvRole::kDFake));
    // D_B separates the two predictions: B'_d plays real, B'_x plays fake.
    l_d_adv = add(l_d_adv, loss_adversarial(d.d_b.forward(detach(ts.bone_d)),
                                            AdvRole::kDReal));
    l_d_adv = add(l_d_adv, loss_adversarial(d.d_b.forward(detach(ts.bone_x)),
                                            AdvRole::kDFake));
    check_finite("L_D_adv", l_d_adv, parts);
    Var total_d = mul_scalar(l_d_adv, w.lambda_adv);

    if (fine) {
      Var real_in = mul_mask(grad_map(detach(ts.q_dx)), lung_d_bin);
      Var fake_q = sub(make_const(ix), ts.r_x);
      Var fake_in = mul_mask(grad_map(detach(fake_q)), lung_x_bin);
      Var l_d_grad =
          add(loss_adversarial(d.d_grad.forward(real_in), AdvRole::kDReal),
              loss_adversarial(d.d_grad.forward(fake_in), AdvRole::kDFake));
      check_finite("L_D_grad", l_d_grad, parts);
      total_d = add(total_d, mul_scalar(l_d_grad, w.lambda_grad));
    }
    st.opt_d.zero_grad();
    backward(total_d);
    st.opt_d.step();
  }

  // --- generator update (through the refreshed discriminators) ---
  {
    Var l_su = loss_supervised(ts.q_d, ts.r_d, ts.bone_d, q_true, r_true, b_true);
    Var l_g_adv = loss_adversarial(d.d_x.forward(ts.i_dx), AdvRole::kGen);
    l_g_adv = add(l_g_adv, loss_adversarial(d.d_d.forward(ts.i_xd), AdvRole::kGen));
    l_g_adv = add(l_g_adv, loss_adversarial(d.d_b.forward(ts.bone_x), AdvRole::kGen));
    FeatureConsistency fc = loss_feature_consistency(
        ts.c_x, ts.c_d, ts.c_of_dx, ts.c_of_xd, ts.s_x, ts.s_d, ts.s_of_xd,
        ts.s_of_dx, ts.b_x, ts.b_d, ts.b_of_xd, ts.b_of_dx);
    RecCyc rc = loss_rec_cyc(ts.i_x_rec, ix, ts.i_d_rec, id, ts.i_x_cyc,
                             ts.i_d_cyc);

    check_finite("L_su", l_su, parts);
    check_finite("L_G_adv", l_g_adv, parts);
    check_finite("L_c", fc.l_c, parts);
    check_finite("L_s", fc.l_s, parts);
    check_finite("L_rec", rc.l_rec, parts);
    check_finite("L_cyc", rc.l_cyc, parts);

    Var total_g = add(l_su, mul_scalar(l_g_adv, w.lambda_adv));
    total_g = add(total_g, mul_scalar(add(fc.l_c, fc.l_s), w.lambda_f));
    total_g = add(total_g, mul_scalar(add(rc.l_rec, rc.l_cyc), w.lambda_i));

    if (fine) {
      Var pred_q = sub(make_const(ix), ts.r_x);
      Var grad_in = mul_mask(grad_map(pred_q), lung_x_bin);
      Var l_g_grad = loss_adversarial(d.d_grad.forward(grad_in), AdvRole::kGen);
      Var l_inter = loss_inter(ts.r_x, bone_mask_img, lung_x_img);
      Var l_lap = loss_laplace(ts.r_x, bone_mask_img, lung_x_img);
      check_finite("L_G_grad", l_g_grad, parts);
      check_finite("L_inter", l_inter, parts);
      check_finite("L_lap", l_lap, parts);
      total_g = add(total_g, mul_scalar(l_g_grad, w.lambda_grad));
      total_g = add(total_g, mul_scalar(l_inter, w.lambda_inter));
      total_g = add(total_g, mul_scalar(l_lap, w.lambda_lap));
    }
    st.opt_g.zero_grad();
    backward(total_g);
    st.opt_g.step();
  }

  rep = total_loss(stage, parts, w);
  rep.decomp_dev = ts.decomposition_deviation();
  return rep;
}

Var dice_loss(const Var& pred, const Tensor& target) {
  const double eps = 1e-6;
  Var tgt = make_const(target);
  Var num = add_scalar(mul_scalar(sum_all(mul(pred, tgt)), 2.0), eps);
  Var den = add_scalar(add(sum_all(pred), sum_all(tgt)), eps);
  return add_scalar(neg(div(num, den)), 1.0);
}

double pretrain_lung_decoder(TrainState& st, const Dataset& data,
                             int64_t iters, std::ostream* log) {
  if (data.drr.empty())
    throw std::invalid_argument("pretrain_lung_decoder: empty dataset");
  std::vector<Var> params = st.gens.params.with_prefix({"e_s.", "g_l."});
  Adam opt(params, st.cfg.lr);
  Rng rng = st.rng_noise.split();

  double dice_tail_sum = 0.0;
  int64_t dice_tail_n = 0;
  const int64_t tail_start = std::max<int64_t>(0, iters - 32);
  for (int64_t it = 0; it < iters; ++it) {
    const int i = rng.uniform_int((int)data.drr.size());
    // Lung geometry is shared between a DRR and its styled rendering, so
    // both domains train against L_d.
    const bool use_cxr = !data.cxr.empty() && rng.uniform_int(2) == 1;
    const Image& img = use_cxr ? data.cxr[i % data.cxr.size()].image
                               : data.drr[i].image;
    const Image& target = data.drr[use_cxr ? i % data.cxr.size() : i].lung_mask;

    Var pred = st.gens.g_l.forward(
        st.gens.e_s.forward(make_const(image_to_tensor(img))));
    Var loss = dice_loss(pred, image_to_tensor(target));
    if (!std::isfinite(loss->value[0])) throw TrainAbortError("L_dice");

    opt.zero_grad();
    backward(loss);
    opt.step();
    if (it >= tail_start) {
      dice_tail_sum += 1.0 - loss->value[0];
      ++dice_tail_n;
    }
    if (log && (it % 100 == 0 || it + 1 == iters))
      *log << "pretrain iter=" << it << " L_dice=" << loss->value[0] << "\n";
  }
  st.gens.g_l_frozen = true;
  st.pretrained = true;
  return dice_tail_n ? dice_tail_sum / dice_tail_n : 0.0;
}

namespace {

void append_adam_tensors(CheckpointData& data, const char* tag,
                         const std::vector<std::string>& names, Adam& opt) {
  for (size_t i = 0; i < names.size(); ++i) {
    data.tensors.emplace_back(std::string(tag) + ".m." + names[i],
                              opt.moments_m()[i]);
    data.tensors.emplace_back(std::string(tag) + ".v." + names[i],
                              opt.moments_v()[i]);
  }
}

void restore_adam_tensors(const CheckpointData& data, const char* tag,
                          const std::vector<std::string>& names, Adam& opt) {
  for (size_t i = 0; i < names.size(); ++i) {
    const Tensor* m = data.find_tensor(std::string(tag) + ".m." + names[i]);
    const Tensor* v = data.find_tensor(std::string(tag) + ".v." + names[i]);
    if (!m || !v)
      throw std::runtime_error("checkpoint missing optimizer state for " +
                               names[i]);
    opt.moments_m()[i] = *m;
    opt.moments_v()[i] = *v;
  }
}

}  // namespace

void save_train_checkpoint(const TrainState& st, const std::string& path) {
  CheckpointData data;
  data.cfg = st.cfg.net;
  data.meta["stage"] =
      stage_for_iter(st.cfg, st.iter) == TrainStage::kInit ? "init" : "fine";
  data.meta["mode"] = mode_name(st.cfg.mode);
  data.meta["iter"] = std::to_string(st.iter);
  data.meta["pretrained"] = st.pretrained ? "1" : "0";
  data.meta["g_l_frozen"] = st.gens.g_l_frozen ? "1" : "0";
  data.meta["opt_g_t"] = std::to_string(st.opt_g.step_count());
  data.meta["opt_d_t"] = std::to_string(st.opt_d.step_count());
  data.meta["rng_drr"] = st.rng_drr.state();
  data.meta["rng_cxr"] = st.rng_cxr.state();
  data.meta["rng_noise"] = st.rng_noise.state();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", st.cfg.bone_mask.sigma_spatial);
  data.meta["bone_mask.sigma_spatial"] = buf;
  std::snprintf(buf, sizeof(buf), "%.17g", st.cfg.bone_mask.sigma_range);
  data.meta["bone_mask.sigma_range"] = buf;
  std::snprintf(buf, sizeof(buf), "%.17g", st.cfg.bone_mask.theta_thresh);
  data.meta["bone_mask.theta_thresh"] = buf;
  data.meta["bone_mask.kernel_radius"] =
      std::to_string(st.cfg.bone_mask.kernel_radius);

  for (const auto& [n, v] : st.gens.params.items)
    data.tensors.emplace_back("gen." + n, v->value);
  if (st.discs)
    for (const auto& [n, v] : st.discs->params.items)
      data.tensors.emplace_back("disc." + n, v->value);
  append_adam_tensors(data, "adam_g", st.opt_g_names,
                      const_cast<Adam&>(st.opt_g));
  if (st.discs)
    append_adam_tensors(data, "adam_d", st.opt_d_names,
                        const_cast<Adam&>(st.opt_d));
  save_checkpoint(path, data);
}

TrainState load_train_state(const std::string& path, const TrainConfig& cfg) {
  CheckpointData data = load_checkpoint(path);
  data.require_compatible(cfg.net);
  const std::string ck_mode = data.meta.count("mode") ? data.meta.at("mode") : "full";
  if (ck_mode != mode_name(cfg.mode))
    throw std::runtime_error("checkpoint mode '" + ck_mode +
                             "' does not match configured mode '" +
                             mode_name(cfg.mode) + "'");

  TrainState st = make_train_state(cfg);
  for (const auto& [n, v] : st.gens.params.items) {
    const Tensor* t = data.find_tensor("gen." + n);
    if (!t) throw std::runtime_error("checkpoint missing generator tensor " + n);
    if (!t->same_shape(v->value))
      throw std::runtime_error("checkpoint tensor shape mismatch for " + n);
    v->value = *t;
  }
  if (st.discs) {
    for (const auto& [n, v] : st.discs->params.items) {
      const Tensor* t = data.find_tensor("disc." + n);
      if (!t)
        throw std::runtime_error("checkpoint missing discriminator tensor " + n);
      v->value = *t;
    }
    restore_adam_tensors(data, "adam_d", st.opt_d_names, st.opt_d);
    st.opt_d.set_step_count(std::stoll(data.meta.at("opt_d_t")));
  }
  restore_adam_tensors(data, "adam_g", st.opt_g_names, st.opt_g);
  st.opt_g.set_step_count(std::stoll(data.meta.at("opt_g_t")));
  st.iter = std::stoll(data.meta.at("iter"));
  st.pretrained = data.meta.at("pretrained") == "1";
  st.gens.g_l_frozen = data.meta.at("g_l_frozen") == "1";
  st.rng_drr = Rng::from_state(data.meta.at("rng_drr"));
  st.rng_cxr = Rng::from_state(data.meta.at("rng_cxr"));
  st.rng_noise = Rng::from_state(data.meta.at("rng_noise"));
  return st;
}

std::string run_training(TrainState& st, const Dataset& data,
                         const std::string& out_dir, std::ostream& log_stream) {
  if (data.drr.empty() || data.cxr.empty())
    throw std::invalid_argument("run_training: dataset needs both domains");
  fs::create_directories(out_dir);

  if (st.cfg.mode == TrainMode::kFull && !st.pretrained && st.iter == 0) {
    const double dice = pretrain_lung_decoder(st, data, st.cfg.pretrain_iters,
                                              &log_stream);
    log_stream << "pretrain done mean_dice=" << dice << "\n";
    save_train_checkpoint(st, (fs::path(out_dir) / "checkpoint_pretrain.ckpt").string());
  }

  const int64_t n_total = total_iters(st.cfg);
  TrainStage prev_stage = stage_for_iter(st.cfg, st.iter);
  while (st.iter < n_total) {
    const TrainStage stage = stage_for_iter(st.cfg, st.iter);
    if (stage != prev_stage) {
      save_train_checkpoint(
          st, (fs::path(out_dir) / "checkpoint_stage_boundary.ckpt").string());
      prev_stage = stage;
    }
    // Unpaired uniform draws with independent streams.
    const DrrSample& drr = data.drr[st.rng_drr.uniform_int((int)data.drr.size())];
    const PseudoCxrSample& cxr =
        data.cxr[st.rng_cxr.uniform_int((int)data.cxr.size())];
    LossReport rep = train_step(st, drr, cxr, stage);
    ++st.iter;
    log_stream << rep.log_line(st.iter, stage) << "\n";
    if (st.cfg.checkpoint_every > 0 && st.iter % st.cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%08lld.ckpt",
                    (long long)st.iter);
      save_train_checkpoint(st, (fs::path(out_dir) / name).string());
    }
  }
  const std::string final_path =
      (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  save_train_checkpoint(st, final_path);
  return final_path;
}

GeneratorBundle generators_from_checkpoint(const CheckpointData& data) {
  GeneratorBundle gens = make_generators(data.cfg);
  for (const auto& [n, v] : gens.params.items) {
    const Tensor* t = data.find_tensor("gen." + n);
    if (!t) throw std::runtime_error("checkpoint missing generator tensor " + n);
    if (!t->same_shape(v->value))
      throw std::runtime_error("checkpoint tensor shape mismatch for " + n);
    v->value = *t;
  }
  if (data.meta.count("g_l_frozen"))
    gens.g_l_frozen = data.meta.at("g_l_frozen") == "1";
  return gens;
}

SuppressOutputs suppress(const Image& input, const CheckpointData& ckpt) {
  const int s = ckpt.cfg.image_size;
  if (input.h < s || input.w < s)
    throw std::invalid_argument("suppress: input must be at least network size");
  GeneratorBundle gens = generators_from_checkpoint(ckpt);
  const TrainMode mode = ckpt.meta.count("mode")
                             ? mode_from_name(ckpt.meta.at("mode"))
                             : TrainMode::kFull;
  BoneMaskConfig bm;
  if (ckpt.meta.count("bone_mask.sigma_spatial")) {
    bm.sigma_spatial = std::stod(ckpt.meta.at("bone_mask.sigma_spatial"));
    bm.sigma_range = std::stod(ckpt.meta.at("bone_mask.sigma_range"));
    bm.theta_thresh = std::stod(ckpt.meta.at("bone_mask.theta_thresh"));
    bm.kernel_radius = std::stoi(ckpt.meta.at("bone_mask.kernel_radius"));
  }

  const Image net_in = resize_bilinear(input, s, s);
  const Tensor in_t = image_to_tensor(net_in);
  Var iv = make_const(in_t);
  Var contrast = gens.e_c.forward(iv);
  Var structure = gens.e_s.forward(iv);
  Var bone_feat = gens.e_b.forward(iv);

  SuppressOutputs out;
  if (mode == TrainMode::kNRM) {
    // nRM decodes the suppressed image directly.
    Image q_net = tensor_to_image(gens.g_q.forward(structure, contrast)->value);
    out.residual_net = Image(s, s);
    for (int64_t i = 0; i < q_net.size(); ++i)
      out.residual_net.v[i] = net_in.v[i] - q_net.v[i];
    out.suppressed_full = clip(resize_bilinear(q_net, input.h, input.w), -1.f, 1.f);
  } else {
    out.residual_net = tensor_to_image(gens.g_r.forward(bone_feat, contrast)->value);
    const Image r_full = resize_bilinear(out.residual_net, input.h, input.w);
    out.suppressed_full = Image(input.h, input.w);
    for (int64_t i = 0; i < input.size(); ++i)
      out.suppressed_full.v[i] =
          std::clamp(input.v[i] - r_full.v[i], -1.0f, 1.0f);
  }
  out.bone_net = tensor_to_image(gens.g_b.forward(bone_feat)->value);
  out.lung_net = tensor_to_image(gens.g_l.forward(structure)->value);
  out.bone_mask_net = bone_mask(out.bone_net, bm);
  return out;
}

}  // namespace rsup
