#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "rsup/adam.hpp"
#include "rsup/checkpoint.hpp"
#include "rsup/dataset.hpp"
#include "rsup/losses.hpp"
#include "rsup/nets.hpp"

namespace rsup {

enum class TrainMode { kFull, kNRM, kRM, kRMDA };

std::string mode_name(TrainMode m);
TrainMode mode_from_name(const std::string& s);

struct TrainConfig {
  int64_t iters_init = 2000;  // paper: 40000
  int64_t iters_fine = 500;   // paper: 10000
  double lr = 1e-5;
  int batch_size = 1;
  uint64_t seed = 5;
  TrainMode mode = TrainMode::kFull;
  int64_t pretrain_iters = 500;
  int64_t checkpoint_every = 500;  // 0: only at stage boundaries
  LossWeights weights;
  NetConfig net;
  BoneMaskConfig bone_mask;
  void validate() const;
};

// Raised when a loss term goes non-finite; carries the term name.
struct TrainAbortError : std::runtime_error {
  std::string term;
  explicit TrainAbortError(const std::string& t)
      : std::runtime_error("non-finite loss term: " + t), term(t) {}
};

// All arrays produced by one disentangled forward pass (Table-1 notation in
// the field comments). I'_x = Q'_x + R'_x holds exactly by construction.
struct TransferSet {
  Tensor in_x, in_d;  // I_x, I_d
  // encoder features
  Var c_x, c_d;        // contrast
  Var s_x, s_d;        // suppressed-structure
  Var b_x, b_d;        // bone-structure
  // within-domain decodes
  Var q_x, q_d;        // Q'
  Var r_x, r_d;        // R'
  Var bone_x, bone_d;  // B'
  Var lung_x, lung_d;  // L'
  Var i_x_rec, i_d_rec;  // I'
  // cross-domain transfers and the shared rib-suppressed transfer
  Var i_xd, i_dx;  // I'_{x->d}, I'_{d->x}
  Var q_dx;        // Q'_{d->x} = G_Q(E_C(I_x), E_S(I_d))
  // cycle reconstructions
  Var i_x_cyc, i_d_cyc;  // I''
  // re-encoded features of the transfers (feature-consistency + cycle)
  Var c_of_xd, c_of_dx;
  Var s_of_xd, s_of_dx;
  Var b_of_xd, b_of_dx;

  bool has_transfers = false;
  // max |I' - Q' - R'| over both domains
  double decomposition_deviation() const;
};

struct TransferOptions {
  bool transfers = true;  // cross-domain + cycle branches
  bool masks = true;      // lung decodes
  bool bones = true;      // bone decodes
};

// Contrast-exchanging forward pass over one unpaired (CXR, DRR) image pair.
TransferSet ce_transfer(const GeneratorBundle& gens, const Tensor& image_x,
                        const Tensor& image_d,
                        const TransferOptions& opts = {});

struct TrainState {
  TrainConfig cfg;
  GeneratorBundle gens;
  std::optional<DiscriminatorBundle> discs;
  Adam opt_g, opt_d;
  std::vector<std::string> opt_g_names, opt_d_names;
  int64_t iter = 0;  // completed training iterations
  bool pretrained = false;
  Rng rng_drr{0}, rng_cxr{0}, rng_noise{0};
};

TrainState make_train_state(const TrainConfig& cfg);

TrainStage stage_for_iter(const TrainConfig& cfg, int64_t iter);
int64_t total_iters(const TrainConfig& cfg);

// One optimization step: discriminator update (when the mode has
// discriminators) followed by a generator update.
LossReport train_step(TrainState& st, const DrrSample& drr,
                      const PseudoCxrSample& cxr, TrainStage stage);

// Soft Dice loss 1 - (2|P.T| + eps) / (|P| + |T| + eps), eps = 1e-6.
Var dice_loss(const Var& pred, const Tensor& target);

// Dice-loss pretraining of G_L (and the E_S path it consumes) on lung-mask
// projections from both domains; freezes G_L afterwards. Returns the mean
// soft-Dice score over the final 32 iterations.
double pretrain_lung_decoder(TrainState& st, const Dataset& data,
                             int64_t iters, std::ostream* log);

// Full schedule for the configured mode: optional pretraining, the init
// stage, and the fine stage (full mode only). Appends one log line per
// iteration and checkpoints every cfg.checkpoint_every iterations and at
// stage boundaries. Returns the final checkpoint path.
std::string run_training(TrainState& st, const Dataset& data,
                         const std::string& out_dir, std::ostream& log_stream);

// Checkpoint round-trip for a full training state.
void save_train_checkpoint(const TrainState& st, const std::string& path);
TrainState load_train_state(const std::string& path, const TrainConfig& cfg);

// Generator-only restore (inference).
GeneratorBundle generators_from_checkpoint(const CheckpointData& data);

struct SuppressOutputs {
  Image suppressed_full;  // Q at the input resolution
  Image residual_net;     // R' at network resolution
  Image bone_net;         // B'
  Image lung_net;         // L'
  Image bone_mask_net;    // M'
};

// Residual-map inference: resize to the network size, predict R', upsample
// back, subtract, clip to [-1,1]. nRM checkpoints decode Q directly.
SuppressOutputs suppress(const Image& input, const CheckpointData& ckpt);

}  // namespace rsup
