#include "rsup/dataset.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace rsup {

static_assert(std::endian::native == std::endian::little,
              "raw blocks are little-endian float32");

namespace {

std::string sample_dir_name(const char* kind, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%06zu", kind, i);
  return buf;
}

struct ArrayRef {
  std::string name;
  const Image* img;
};

void write_sample(const fs::path& dir, const char* kind,
                  const std::vector<ArrayRef>& arrays,
                  const std::vector<std::pair<std::string, double>>& meta) {
  fs::create_directories(dir);
  std::ofstream hdr(dir / "header.txt");
  if (!hdr) throw std::runtime_error("cannot write " + (dir / "header.txt").string());
  hdr << "ribsup-sample v1\n";
  hdr << "kind " << kind << "\n";
  char buf[64];
  for (const auto& [k, v] : meta) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    hdr << "meta " << k << " " << buf << "\n";
  }
  for (const auto& a : arrays) {
    hdr << "array " << a.name << " " << a.img->h << " " << a.img->w
        << " float32 " << a.name << ".raw\n";
    write_raw_f32((dir / (a.name + ".raw")).string(), *a.img);
  }
}

struct ParsedSample {
  std::string kind;
  std::vector<std::pair<std::string, double>> meta;
  std::vector<std::tuple<std::string, int, int, std::string>> arrays;
};

ParsedSample parse_header(const fs::path& dir) {
  const fs::path hp = dir / "header.txt";
  std::ifstream in(hp);
  if (!in) throw std::runtime_error("missing header: " + hp.string());
  ParsedSample ps;
  std::string line;
  if (!std::getline(in, line) || line != "ribsup-sample v1")
    throw std::runtime_error("bad header magic in " + hp.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "kind") {
      ss >> ps.kind;
    } else if (tag == "meta") {
      std::string k;
      double v;
      ss >> k >> v;
      ps.meta.emplace_back(k, v);
    } else if (tag == "array") {
      std::string name, dtype, file;
      int h, w;
      ss >> name >> h >> w >> dtype >> file;
      if (!ss || dtype != "float32")
        throw std::runtime_error("bad array line in " + hp.string() + ": " + line);
      ps.arrays.emplace_back(name, h, w, file);
    } else {
      throw std::runtime_error("unknown header line in " + hp.string() + ": " + line);
    }
  }
  return ps;
}

Image load_array(const fs::path& dir, const ParsedSample& ps,
                 const std::string& name) {
  for (const auto& [n, h, w, file] : ps.arrays) {
    if (n == name) return read_raw_f32((dir / file).string(), h, w);
  }
  throw std::runtime_error("dataset entry '" + name + "' missing in " +
                           dir.string());
}

double get_meta(const ParsedSample& ps, const std::string& key, double dflt) {
  for (const auto& [k, v] : ps.meta)
    if (k == key) return v;
  return dflt;
}

}  // namespace

void write_raw_f32(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(img.v.data()),
            (std::streamsize)(img.v.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path);
}

Image read_raw_f32(const std::string& path, int h, int w) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("dataset entry missing: " + path);
  const auto bytes = (int64_t)in.tellg();
  const int64_t expect = (int64_t)h * w * (int64_t)sizeof(float);
  if (bytes != expect)
    throw std::runtime_error("dataset entry corrupt (size " +
                             std::to_string(bytes) + ", expected " +
                             std::to_string(expect) + "): " + path);
  in.seekg(0);
  Image img(h, w);
  in.read(reinterpret_cast<char*>(img.v.data()), expect);
  if (!in) throw std::runtime_error("short read from " + path);
  return img;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  fs::create_directories(path);
  for (size_t i = 0; i < ds.drr.size(); ++i) {
    const DrrSample& s = ds.drr[i];
    write_sample(fs::path(path) / sample_dir_name("drr", i), "drr",
                 {{"image", &s.image},
                  {"suppressed", &s.suppressed},
                  {"residual", &s.residual},
                  {"bone", &s.bone},
                  {"lung_mask", &s.lung_mask}},
                 {{"azimuth_deg", s.geom.azimuth_deg},
                  {"elevation_deg", s.geom.elevation_deg}});
  }
  for (size_t i = 0; i < ds.cxr.size(); ++i) {
    const PseudoCxrSample& s = ds.cxr[i];
    write_sample(fs::path(path) / sample_dir_name("cxr", i), "cxr",
                 {{"image", &s.image},
                  {"truth_suppressed", &s.truth_suppressed},
                  {"truth_residual", &s.truth_residual},
                  {"eval_rib_mask", &s.eval_rib_mask},
                  {"eval_lung_mask", &s.eval_lung_mask},
                  {"eval_background_ring", &s.eval_background_ring}},
                 {{"style.gamma", s.style.gamma},
                  {"style.gain", s.style.gain},
                  {"style.bias", s.style.bias},
                  {"style.noise_sigma", s.style.noise_sigma},
                  {"style.blur_radius", s.style.blur_radius},
                  {"style.seed", (double)s.style.seed}});
  }
}

Dataset load_dataset(const std::string& path) {
  if (!fs::is_directory(path))
    throw std::runtime_error("dataset directory missing: " + path);
  Dataset ds;
  for (size_t i = 0;; ++i) {
    const fs::path dir = fs::path(path) / sample_dir_name("drr", i);
    if (!fs::is_directory(dir)) break;
    ParsedSample ps = parse_header(dir);
    DrrSample s;
    s.image = load_array(dir, ps, "image");
    s.suppressed = load_array(dir, ps, "suppressed");
    s.residual = load_array(dir, ps, "residual");
    s.bone = load_array(dir, ps, "bone");
    s.lung_mask = load_array(dir, ps, "lung_mask");
    s.geom.azimuth_deg = get_meta(ps, "azimuth_deg", 0.0);
    s.geom.elevation_deg = get_meta(ps, "elevation_deg", 0.0);
    s.geom.detector_h = s.image.h;
    s.geom.detector_w = s.image.w;
    ds.drr.push_back(std::move(s));
  }
  for (size_t i = 0;; ++i) {
    const fs::path dir = fs::path(path) / sample_dir_name("cxr", i);
    if (!fs::is_directory(dir)) break;
    ParsedSample ps = parse_header(dir);
    PseudoCxrSample s;
    s.image = load_array(dir, ps, "image");
    s.truth_suppressed = load_array(dir, ps, "truth_suppressed");
    s.truth_residual = load_array(dir, ps, "truth_residual");
    s.eval_rib_mask = load_array(dir, ps, "eval_rib_mask");
    s.eval_lung_mask = load_array(dir, ps, "eval_lung_mask");
    s.eval_background_ring = load_array(dir, ps, "eval_background_ring");
    s.style.gamma = get_meta(ps, "style.gamma", 1.0);
    s.style.gain = get_meta(ps, "style.gain", 1.0);
    s.style.bias = get_meta(ps, "style.bias", 0.0);
    s.style.noise_sigma = get_meta(ps, "style.noise_sigma", 0.0);
    s.style.blur_radius = get_meta(ps, "style.blur_radius", 0.0);
    s.style.seed = (uint64_t)get_meta(ps, "style.seed", 0.0);
    ds.cxr.push_back(std::move(s));
  }
  return ds;
}

}  // namespace rsup
