#include "rsup/nets.hpp"

#include <stdexcept>

namespace rsup {

void NetConfig::validate() const {
  if (image_size < 16 || image_size % 4 != 0)
    throw std::invalid_argument("NetConfig: image_size must be >=16 and divisible by 4");
  if (base_channels < 8 || contrast_dim < 8 || feature_channels < 8)
    throw std::invalid_argument("NetConfig: channel dims must be >= 8");
}

std::vector<std::string> NetConfig::diff(const NetConfig& other) const {
  std::vector<std::string> d;
  if (image_size != other.image_size) d.push_back("image_size");
  if (base_channels != other.base_channels) d.push_back("base_channels");
  if (contrast_dim != other.contrast_dim) d.push_back("contrast_dim");
  if (feature_channels != other.feature_channels) d.push_back("feature_channels");
  return d;
}

Var ParamStore::add(const std::string& name, Tensor init) {
  for (const auto& [n, v] : items)
    if (n == name) throw std::logic_error("duplicate parameter " + name);
  Var p = make_param(std::move(init));
  items.emplace_back(name, p);
  return p;
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return v;
  throw std::out_of_range("parameter not found: " + name);
}

std::vector<Var> ParamStore::all() const {
  std::vector<Var> out;
  out.reserve(items.size());
  for (const auto& [n, v] : items) out.push_back(v);
  return out;
}

std::vector<Var> ParamStore::with_prefix(
    const std::vector<std::string>& prefixes) const {
  std::vector<Var> out;
  for (const auto& [n, v] : items)
    for (const auto& p : prefixes)
      if (n.rfind(p, 0) == 0) {
        out.push_back(v);
        break;
      }
  return out;
}

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeak = 0.2;

Tensor normal_init(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = (double)(float)(stddev * rng.normal());
  return t;
}

Conv2d make_conv(ParamStore& ps, const std::string& name, Rng& rng, int in_ch,
                 int out_ch, int k, int stride, int pad) {
  Conv2d c;
  c.w = ps.add(name + ".weight", normal_init({out_ch, in_ch, k, k}, rng, kInitStd));
  c.b = ps.add(name + ".bias", Tensor::zeros({out_ch}));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Linear make_linear(ParamStore& ps, const std::string& name, Rng& rng, int in_n,
                   int out_n, double bias_init = 0.0) {
  Linear l;
  l.w = ps.add(name + ".weight", normal_init({out_n, in_n}, rng, kInitStd));
  l.b = ps.add(name + ".bias", Tensor::full({out_n}, bias_init));
  return l;
}

InstanceNorm make_norm(ParamStore& ps, const std::string& name, int ch) {
  InstanceNorm n;
  n.gamma = ps.add(name + ".gamma", Tensor::full({ch}, 1.0));
  n.beta = ps.add(name + ".beta", Tensor::zeros({ch}));
  return n;
}

ResBlock make_resblock(ParamStore& ps, const std::string& name, Rng& rng,
                       int in_ch, int out_ch, bool use_norm, double leak) {
  ResBlock r;
  r.conv1 = make_conv(ps, name + ".conv1", rng, in_ch, out_ch, 3, 1, 1);
  r.conv2 = make_conv(ps, name + ".conv2", rng, out_ch, out_ch, 3, 1, 1);
  r.use_norm = use_norm;
  r.leak = leak;
  if (use_norm) {
    r.norm1 = make_norm(ps, name + ".norm1", out_ch);
    r.norm2 = make_norm(ps, name + ".norm2", out_ch);
  }
  if (in_ch != out_ch) {
    r.has_skip = true;
    r.skip = make_conv(ps, name + ".skip", rng, in_ch, out_ch, 1, 1, 0);
  }
  return r;
}

DemodBlock make_demod(ParamStore& ps, const std::string& name, Rng& rng,
                      int in_ch, int out_ch, int contrast_dim) {
  DemodBlock d;
  d.w = ps.add(name + ".weight", normal_init({out_ch, in_ch, 3, 3}, rng, kInitStd));
  d.b = ps.add(name + ".bias", Tensor::zeros({out_ch}));
  d.affine = make_linear(ps, name + ".affine", rng, contrast_dim, in_ch, 1.0);
  return d;
}

int decoder_ch(int f, int stage) {
  // f, f/2, f/4 with a floor of 8
  return std::max(f >> stage, 8);
}

}  // namespace

int structure_size(const NetConfig& cfg) { return cfg.image_size / 4; }

// --- layer forwards -----------------------------------------------------------

Var Conv2d::forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }

Var Linear::forward(const Var& x) const { return linear(x, w, b); }

Var InstanceNorm::forward(const Var& x) const {
  return instance_norm(x, gamma, beta);
}

Var ResBlock::forward(const Var& x) const {
  auto act = [slope = leak](const Var& v) {
    return slope > 0 ? leaky_relu(v, slope) : relu(v);
  };
  Var h = conv1.forward(x);
  if (use_norm) h = norm1.forward(h);
  h = act(h);
  h = conv2.forward(h);
  if (use_norm) h = norm2.forward(h);
  Var s = has_skip ? skip.forward(x) : x;
  return add(s, h);
}

Var DemodBlock::forward(const Var& x, const Var& style) const {
  Var scale = affine.forward(style);
  Var wmod = scale_in_channels(w, scale);
  Var wdem = demod_out(wmod);
  return conv2d(x, wdem, b, 1, 1);
}

Var ContrastEncoder::forward(const Var& image) const {
  Var h = image;
  for (size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].forward(h);
    h = norms[i].forward(h);
    h = leaky_relu(h, kLeak);
  }
  return fc.forward(global_avg_pool(h));
}

Var StructureEncoder::forward(const Var& image) const {
  Var h = leaky_relu(norm1.forward(conv1.forward(image)), kLeak);
  h = leaky_relu(norm2.forward(conv2.forward(h)), kLeak);
  return res.forward(h);
}

Var StyledDecoder::forward(const Var& structure, const Var& contrast) const {
  if (structure->value.dim(1) != structure_size ||
      structure->value.dim(2) != structure_size)
    throw std::invalid_argument("decoder: structure map resolution mismatch");
  Var feat = relu(blocks[0].forward(structure, contrast));
  Var img = to_img[0].forward(feat);
  for (int s = 1; s < 3; ++s) {
    feat = relu(blocks[s].forward(upsample2(feat), contrast));
    img = add(to_img[s].forward(feat), upsample2(img));
  }
  return img;
}

Var PlainDecoder::forward(const Var& structure) const {
  if (structure->value.dim(1) != structure_size ||
      structure->value.dim(2) != structure_size)
    throw std::invalid_argument("decoder: structure map resolution mismatch");
  Var feat = blocks[0].forward(structure);
  Var img = to_img[0].forward(feat);
  for (int s = 1; s < 3; ++s) {
    feat = blocks[s].forward(upsample2(feat));
    img = add(to_img[s].forward(feat), upsample2(img));
  }
  return act == Act::kTanh ? tanh_v(img) : sigmoid_v(img);
}

Var PatchDiscriminator::forward(const Var& x) const {
  if (x->value.dim(1) < 16 || x->value.dim(2) < 16)
    throw std::invalid_argument("discriminator input must be >= 16x16");
  Var h = x;
  for (const auto& c : convs) h = leaky_relu(c.forward(h), kLeak);
  return head.forward(h);
}

// --- bundle construction ---------------------------------------------------------

GeneratorBundle make_generators(const NetConfig& cfg) {
  cfg.validate();
  GeneratorBundle g;
  g.cfg = cfg;
  Rng rng(cfg.seed ^ 0x67656e65726174ULL);
  ParamStore& ps = g.params;
  const int b = cfg.base_channels, f = cfg.feature_channels;

  // E_C: 1 -> b -> 2b -> 4b -> 8b, then GAP + FC to contrast_dim.
  int ch = 1;
  for (int i = 0; i < 4; ++i) {
    const int oc = b << i;
    g.e_c.convs.push_back(
        make_conv(ps, "e_c.conv" + std::to_string(i + 1), rng, ch, oc, 3, 2, 1));
    g.e_c.norms.push_back(make_norm(ps, "e_c.norm" + std::to_string(i + 1), oc));
    ch = oc;
  }
  g.e_c.fc = make_linear(ps, "e_c.fc", rng, ch, cfg.contrast_dim);

  auto make_structure = [&](const char* name) {
    StructureEncoder e;
    e.conv1 = make_conv(ps, std::string(name) + ".conv1", rng, 1, b, 3, 2, 1);
    e.norm1 = make_norm(ps, std::string(name) + ".norm1", b);
    e.conv2 = make_conv(ps, std::string(name) + ".conv2", rng, b, f, 3, 2, 1);
    e.norm2 = make_norm(ps, std::string(name) + ".norm2", f);
    e.res = make_resblock(ps, std::string(name) + ".res", rng, f, f, true, kLeak);
    return e;
  };
  g.e_s = make_structure("e_s");
  g.e_b = make_structure("e_b");

  auto make_styled = [&](const char* name) {
    StyledDecoder d;
    d.structure_size = cfg.image_size / 4;
    int in_ch = f;
    for (int s = 0; s < 3; ++s) {
      const int oc = decoder_ch(f, s);
      d.blocks[s] = make_demod(ps, std::string(name) + ".block" + std::to_string(s + 1),
                               rng, in_ch, oc, cfg.contrast_dim);
      d.to_img[s] = make_conv(ps, std::string(name) + ".to_img" + std::to_string(s + 1),
                              rng, oc, 1, 1, 1, 0);
      in_ch = oc;
    }
    return d;
  };
  g.g_q = make_styled("g_q");
  g.g_r = make_styled("g_r");

  // Plain decoders keep instance norm in their residual blocks: the Tanh
  // head faces a mostly-background target at exactly -1, and without
  // normalization the pre-activation drifts into saturation and flattens
  // the rib contrast. The bone head's final bias starts at -1 so the
  // background begins near its target.
  auto make_plain = [&](const char* name, PlainDecoder::Act act) {
    PlainDecoder d;
    d.act = act;
    d.structure_size = cfg.image_size / 4;
    int in_ch = f;
    for (int s = 0; s < 3; ++s) {
      const int oc = decoder_ch(f, s);
      d.blocks[s] = make_resblock(ps, std::string(name) + ".block" + std::to_string(s + 1),
                                  rng, in_ch, oc, true, 0.0);
      d.to_img[s] = make_conv(ps, std::string(name) + ".to_img" + std::to_string(s + 1),
                              rng, oc, 1, 1, 1, 0);
      in_ch = oc;
    }
    return d;
  };
  g.g_b = make_plain("g_b", PlainDecoder::Act::kTanh);
  g.g_b.to_img[2].b->value.fill(-1.0);
  g.g_l = make_plain("g_l", PlainDecoder::Act::kSigmoid);
  return g;
}

DiscriminatorBundle make_discriminators(const NetConfig& cfg) {
  cfg.validate();
  if (cfg.image_size % 16 != 0)
    throw std::invalid_argument("discriminators need image_size divisible by 16");
  DiscriminatorBundle d;
  d.cfg = cfg;
  Rng rng(cfg.seed ^ 0x646973637269ULL);
  ParamStore& ps = d.params;
  const int b = cfg.base_channels;

  auto make_patch = [&](const char* name, int in_ch) {
    PatchDiscriminator pd;
    int ch = in_ch;
    for (int i = 0; i < 4; ++i) {
      const int oc = b << i;
      pd.convs.push_back(make_conv(ps, std::string(name) + ".conv" + std::to_string(i + 1),
                                   rng, ch, oc, 4, 2, 1));
      ch = oc;
    }
    pd.head = make_conv(ps, std::string(name) + ".head", rng, ch, 1, 1, 1, 0);
    return pd;
  };
  d.d_x = make_patch("d_x", 1);
  d.d_d = make_patch("d_d", 1);
  d.d_b = make_patch("d_b", 1);
  d.d_grad = make_patch("d_grad", 2);
  return d;
}

}  // namespace rsup
