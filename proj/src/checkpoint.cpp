#include "rsup/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rsup {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

namespace {
constexpr const char* kMagic = "ribsup-checkpoint v1";
}

const Tensor* CheckpointData::find_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void CheckpointData::require_compatible(const NetConfig& expected) const {
  const auto d = cfg.diff(expected);
  if (d.empty()) return;
  std::string msg = "checkpoint NetConfig mismatch in field(s):";
  for (const auto& f : d) msg += " " + f;
  throw std::runtime_error(msg);
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << kMagic << "\n";
  out << "config image_size " << data.cfg.image_size << "\n";
  out << "config base_channels " << data.cfg.base_channels << "\n";
  out << "config contrast_dim " << data.cfg.contrast_dim << "\n";
  out << "config feature_channels " << data.cfg.feature_channels << "\n";
  out << "config seed " << data.cfg.seed << "\n";
  for (const auto& [k, v] : data.meta) out << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : data.tensors) {
    out << "tensor " << name << " " << t.rank();
    for (int i = 0; i < t.rank(); ++i) out << " " << t.dim(i);
    out << " float32\n";
  }
  out << "blobs\n";
  std::vector<float> buf;
  for (const auto& [name, t] : data.tensors) {
    buf.resize((size_t)t.size());
    for (int64_t i = 0; i < t.size(); ++i) buf[(size_t)i] = (float)t[i];
    out.write(reinterpret_cast<const char*>(buf.data()),
              (std::streamsize)(buf.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw std::runtime_error("not a checkpoint file: " + path);

  CheckpointData data;
  struct Entry {
    std::string name;
    std::vector<int> shape;
  };
  std::vector<Entry> dir;
  while (std::getline(in, line)) {
    if (line == "blobs") break;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "config") {
      std::string k;
      ss >> k;
      if (k == "image_size") ss >> data.cfg.image_size;
      else if (k == "base_channels") ss >> data.cfg.base_channels;
      else if (k == "contrast_dim") ss >> data.cfg.contrast_dim;
      else if (k == "feature_channels") ss >> data.cfg.feature_channels;
      else if (k == "seed") ss >> data.cfg.seed;
      else throw std::runtime_error("unknown config key in checkpoint: " + k);
    } else if (tag == "meta") {
      std::string k, v;
      ss >> k;
      std::getline(ss, v);
      if (!v.empty() && v[0] == ' ') v.erase(0, 1);
      data.meta[k] = v;
    } else if (tag == "tensor") {
      Entry e;
      int rank;
      ss >> e.name >> rank;
      for (int i = 0; i < rank; ++i) {
        int d;
        ss >> d;
        e.shape.push_back(d);
      }
      std::string dtype;
      ss >> dtype;
      if (!ss || dtype != "float32")
        throw std::runtime_error("bad tensor line in checkpoint: " + line);
      dir.push_back(std::move(e));
    } else {
      throw std::runtime_error("unknown checkpoint line: " + line);
    }
  }
  for (const auto& e : dir) {
    Tensor t(e.shape);
    std::vector<float> buf((size_t)t.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            (std::streamsize)(buf.size() * sizeof(float)));
    if (!in)
      throw std::runtime_error("checkpoint truncated at tensor " + e.name);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = (double)buf[(size_t)i];
    data.tensors.emplace_back(e.name, std::move(t));
  }
  return data;
}

}  // namespace rsup
