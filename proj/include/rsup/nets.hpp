#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsup/autodiff.hpp"
#include "rsup/rng.hpp"

namespace rsup {

struct NetConfig {
  int image_size = 64;       // multiple of 4 (16 for the discriminators)
  int base_channels = 16;    // first conv width; doubled per stride-2 layer
  int contrast_dim = 32;     // contrast vector length (paper: 256)
  int feature_channels = 32; // structure map channels (paper: 256)
  uint64_t seed = 3;

  void validate() const;
  bool operator==(const NetConfig&) const = default;
  // Fields that differ from `other`, for checkpoint mismatch errors.
  std::vector<std::string> diff(const NetConfig& other) const;
};

// Ordered, named parameter registry; the order fixes both initialization
// and the checkpoint layout.
struct ParamStore {
  std::vector<std::pair<std::string, Var>> items;
  Var add(const std::string& name, Tensor init);
  Var find(const std::string& name) const;  // throws when absent
  std::vector<Var> all() const;
  // Parameters whose name starts with one of the prefixes.
  std::vector<Var> with_prefix(const std::vector<std::string>& prefixes) const;
};

// --- layers -----------------------------------------------------------------

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 1;
  Var forward(const Var& x) const;
};

struct Linear {
  Var w, b;
  Var forward(const Var& x) const;
};

struct InstanceNorm {
  Var gamma, beta;
  Var forward(const Var& x) const;
};

// conv -> [norm] -> act -> conv -> [norm], plus identity (or 1x1) skip.
struct ResBlock {
  Conv2d conv1, conv2;
  Conv2d skip;  // 1x1, present only when channel counts differ
  bool has_skip = false;
  InstanceNorm norm1, norm2;
  bool use_norm = false;
  double leak = 0.0;  // 0 -> ReLU
  Var forward(const Var& x) const;
};

// StyleGAN2-style modulated convolution: per-input-channel scale from an
// affine map of the contrast vector, then per-output-channel weight
// demodulation to unit L2 norm.
struct DemodBlock {
  Var w;  // (O,C,3,3)
  Var b;  // (O)
  Linear affine;  // contrast -> C, bias initialized to 1
  Var forward(const Var& x, const Var& style) const;
};

// --- sub-networks -------------------------------------------------------------

// Four 3x3/stride-2 convs, instance norm + LeakyReLU, GAP, FC.
struct ContrastEncoder {
  std::vector<Conv2d> convs;
  std::vector<InstanceNorm> norms;
  Linear fc;
  Var forward(const Var& image) const;
};

// Two 3x3/stride-2 convs then a residual block; emits the structure map at
// image_size/4 with feature_channels channels. Used for both E_S and E_B.
struct StructureEncoder {
  Conv2d conv1, conv2;
  InstanceNorm norm1, norm2;
  ResBlock res;
  Var forward(const Var& image) const;
};

// Three demodulation blocks at s/4, s/2, s; every block feeds a 1x1
// to-image branch whose output is upsampled and added into the next stage.
struct StyledDecoder {
  DemodBlock blocks[3];
  Conv2d to_img[3];
  int structure_size = 0;  // expected input resolution (image_size / 4)
  Var forward(const Var& structure, const Var& contrast) const;
};

// Same shape as StyledDecoder with residual blocks instead of demodulation;
// no contrast input. Final activation: Tanh (bone) or Sigmoid (lung).
struct PlainDecoder {
  ResBlock blocks[3];
  Conv2d to_img[3];
  int structure_size = 0;
  enum class Act { kTanh, kSigmoid } act = Act::kTanh;
  Var forward(const Var& structure) const;
};

// PatchGAN: four 4x4/stride-2 convs and a 1x1 head; raw (no activation)
// patch map of spatial size input/16.
struct PatchDiscriminator {
  std::vector<Conv2d> convs;
  Conv2d head;
  Var forward(const Var& x) const;
};

// --- bundles -----------------------------------------------------------------

struct GeneratorBundle {
  NetConfig cfg;
  ParamStore params;
  ContrastEncoder e_c;
  StructureEncoder e_s, e_b;
  StyledDecoder g_q, g_r;
  PlainDecoder g_b, g_l;
  bool g_l_frozen = false;
};

struct DiscriminatorBundle {
  NetConfig cfg;
  ParamStore params;
  PatchDiscriminator d_x, d_d, d_b, d_grad;  // d_grad takes 2 channels
};

GeneratorBundle make_generators(const NetConfig& cfg);
DiscriminatorBundle make_discriminators(const NetConfig& cfg);

// Structure-map spatial side for a config (image_size / 4).
int structure_size(const NetConfig& cfg);

}  // namespace rsup
