#include "rsup/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace rsup {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<double> parse_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(trim(item)));
  return out;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt(v[i]);
  }
  return s;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c = defaults();
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  static const std::map<std::string, Setter> keys = {
      {"phantom.shape", [](RunConfig& c, const std::string& v) { c.phantom_shape = std::stoi(v); }},
      {"phantom.n_ribs", [](RunConfig& c, const std::string& v) { c.phantom_n_ribs = std::stoi(v); }},
      {"phantom.count_train", [](RunConfig& c, const std::string& v) { c.phantom_count_train = std::stoi(v); }},
      {"phantom.count_eval", [](RunConfig& c, const std::string& v) { c.phantom_count_eval = std::stoi(v); }},
      {"phantom.views", [](RunConfig& c, const std::string& v) { c.phantom_views = std::stoi(v); }},
      {"phantom.seed", [](RunConfig& c, const std::string& v) { c.phantom_seed = std::stoull(v); }},
      {"detector.size", [](RunConfig& c, const std::string& v) { c.detector_size = std::stoi(v); }},
      {"style.gamma", [](RunConfig& c, const std::string& v) { c.style.gamma = std::stod(v); }},
      {"style.gain", [](RunConfig& c, const std::string& v) { c.style.gain = std::stod(v); }},
      {"style.bias", [](RunConfig& c, const std::string& v) { c.style.bias = std::stod(v); }},
      {"style.noise_sigma", [](RunConfig& c, const std::string& v) { c.style.noise_sigma = std::stod(v); }},
      {"style.blur_radius", [](RunConfig& c, const std::string& v) { c.style.blur_radius = std::stod(v); }},
      {"style.seed", [](RunConfig& c, const std::string& v) { c.style.seed = std::stoull(v); }},
      {"net.image_size", [](RunConfig& c, const std::string& v) { c.train.net.image_size = std::stoi(v); }},
      {"net.base_channels", [](RunConfig& c, const std::string& v) { c.train.net.base_channels = std::stoi(v); }},
      {"net.contrast_dim", [](RunConfig& c, const std::string& v) { c.train.net.contrast_dim = std::stoi(v); }},
      {"net.feature_channels", [](RunConfig& c, const std::string& v) { c.train.net.feature_channels = std::stoi(v); }},
      {"net.seed", [](RunConfig& c, const std::string& v) { c.train.net.seed = std::stoull(v); }},
      {"train.iters_init", [](RunConfig& c, const std::string& v) { c.train.iters_init = std::stoll(v); }},
      {"train.iters_fine", [](RunConfig& c, const std::string& v) { c.train.iters_fine = std::stoll(v); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = std::stod(v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = std::stoi(v); }},
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = std::stoull(v); }},
      {"train.mode", [](RunConfig& c, const std::string& v) { c.train.mode = mode_from_name(v); }},
      {"train.pretrain_iters", [](RunConfig& c, const std::string& v) { c.train.pretrain_iters = std::stoll(v); }},
      {"train.checkpoint_every", [](RunConfig& c, const std::string& v) { c.train.checkpoint_every = std::stoll(v); }},
      {"weights.lambda_adv", [](RunConfig& c, const std::string& v) { c.train.weights.lambda_adv = std::stod(v); }},
      {"weights.lambda_f", [](RunConfig& c, const std::string& v) { c.train.weights.lambda_f = std::stod(v); }},
      {"weights.lambda_i", [](RunConfig& c, const std::string& v) { c.train.weights.lambda_i = std::stod(v); }},
      {"weights.lambda_grad", [](RunConfig& c, const std::string& v) { c.train.weights.lambda_grad = std::stod(v); }},
      {"weights.lambda_inter", [](RunConfig& c, const std::string& v) { c.train.weights.lambda_inter = std::stod(v); }},
      {"weights.lambda_lap", [](RunConfig& c, const std::string& v) { c.train.weights.lambda_lap = std::stod(v); }},
      {"bone_mask.sigma_spatial", [](RunConfig& c, const std::string& v) { c.train.bone_mask.sigma_spatial = std::stod(v); }},
      {"bone_mask.sigma_range", [](RunConfig& c, const std::string& v) { c.train.bone_mask.sigma_range = std::stod(v); }},
      {"bone_mask.theta_thresh", [](RunConfig& c, const std::string& v) { c.train.bone_mask.theta_thresh = std::stod(v); }},
      {"bone_mask.kernel_radius", [](RunConfig& c, const std::string& v) { c.train.bone_mask.kernel_radius = std::stoi(v); }},
      {"lpips.n_layers", [](RunConfig& c, const std::string& v) { c.lpips.n_layers = std::stoi(v); }},
      {"lpips.channels",
       [](RunConfig& c, const std::string& v) {
         c.lpips.channels.clear();
         for (double d : parse_list(v)) c.lpips.channels.push_back((int)d);
       }},
      {"lpips.seed", [](RunConfig& c, const std::string& v) { c.lpips.extractor_seed = std::stoull(v); }},
      {"lpips.layer_weights", [](RunConfig& c, const std::string& v) { c.lpips.layer_weights = parse_list(v); }},
  };

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = keys.find(key);
    if (it == keys.end())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": unknown key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const std::exception& e) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": bad value for '" + key + "': " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::serialize() const {
  std::ostringstream o;
  o << "phantom.shape = " << phantom_shape << "\n";
  o << "phantom.n_ribs = " << phantom_n_ribs << "\n";
  o << "phantom.count_train = " << phantom_count_train << "\n";
  o << "phantom.count_eval = " << phantom_count_eval << "\n";
  o << "phantom.views = " << phantom_views << "\n";
  o << "phantom.seed = " << phantom_seed << "\n";
  o << "detector.size = " << detector_size << "\n";
  o << "style.gamma = " << fmt(style.gamma) << "\n";
  o << "style.gain = " << fmt(style.gain) << "\n";
  o << "style.bias = " << fmt(style.bias) << "\n";
  o << "style.noise_sigma = " << fmt(style.noise_sigma) << "\n";
  o << "style.blur_radius = " << fmt(style.blur_radius) << "\n";
  o << "style.seed = " << style.seed << "\n";
  o << "net.image_size = " << train.net.image_size << "\n";
  o << "net.base_channels = " << train.net.base_channels << "\n";
  o << "net.contrast_dim = " << train.net.contrast_dim << "\n";
  o << "net.feature_channels = " << train.net.feature_channels << "\n";
  o << "net.seed = " << train.net.seed << "\n";
  o << "train.iters_init = " << train.iters_init << "\n";
  o << "train.iters_fine = " << train.iters_fine << "\n";
  o << "train.lr = " << fmt(train.lr) << "\n";
  o << "train.batch_size = " << train.batch_size << "\n";
  o << "train.seed = " << train.seed << "\n";
  o << "train.mode = " << mode_name(train.mode) << "\n";
  o << "train.pretrain_iters = " << train.pretrain_iters << "\n";
  o << "train.checkpoint_every = " << train.checkpoint_every << "\n";
  o << "weights.lambda_adv = " << fmt(train.weights.lambda_adv) << "\n";
  o << "weights.lambda_f = " << fmt(train.weights.lambda_f) << "\n";
  o << "weights.lambda_i = " << fmt(train.weights.lambda_i) << "\n";
  o << "weights.lambda_grad = " << fmt(train.weights.lambda_grad) << "\n";
  o << "weights.lambda_inter = " << fmt(train.weights.lambda_inter) << "\n";
  o << "weights.lambda_lap = " << fmt(train.weights.lambda_lap) << "\n";
  o << "bone_mask.sigma_spatial = " << fmt(train.bone_mask.sigma_spatial) << "\n";
  o << "bone_mask.sigma_range = " << fmt(train.bone_mask.sigma_range) << "\n";
  o << "bone_mask.theta_thresh = " << fmt(train.bone_mask.theta_thresh) << "\n";
  o << "bone_mask.kernel_radius = " << train.bone_mask.kernel_radius << "\n";
  o << "lpips.n_layers = " << lpips.n_layers << "\n";
  std::vector<double> ch(lpips.channels.begin(), lpips.channels.end());
  o << "lpips.channels = " << fmt_list(ch) << "\n";
  o << "lpips.seed = " << lpips.extractor_seed << "\n";
  o << "lpips.layer_weights = " << fmt_list(lpips.layer_weights) << "\n";
  return o.str();
}

}  // namespace rsup
