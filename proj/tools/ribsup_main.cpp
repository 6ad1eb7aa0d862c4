// ribsup: synthetic-phantom rib suppression pipeline.
//
// Subcommands: generate-data, train, suppress, evaluate. All knobs come from
// a flat "key = value" config file; every command is deterministic given the
// same config and seeds. Exit codes: 0 success, 1 partial failure,
// 2 training abort (non-finite loss).

#include <CLI11.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "rsup/config.hpp"
#include "rsup/dataset.hpp"
#include "rsup/metrics.hpp"
#include "rsup/pngio.hpp"
#include "rsup/trainer.hpp"

namespace fs = std::filesystem;
using namespace rsup;

namespace {

// A run directory is single-owner while a command executes.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::runtime_error("run directory is locked: " + path_.string());
    const std::string pid = "pid " + std::to_string(::getpid()) + "\n";
    [[maybe_unused]] ssize_t n = ::write(fd_, pid.data(), pid.size());
  }
  ~RunLock() {
    if (fd_ >= 0) ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
  std::ofstream f(out_dir / "config.txt");
  f << cfg.serialize();
}

RunConfig load_config_opt(const std::string& path) {
  return path.empty() ? RunConfig::defaults() : RunConfig::load(path);
}

int cmd_generate_data(const std::string& config_path, const std::string& out) {
  RunConfig cfg = load_config_opt(config_path);
  fs::create_directories(out);
  RunLock lock(out);
  echo_config(cfg, out);

  PhantomShape shape{cfg.phantom_shape, cfg.phantom_shape, cfg.phantom_shape};
  auto build_split = [&](int count, uint64_t seed_base, const fs::path& dir,
                         uint64_t style_seed_base) {
    Dataset ds;
    const auto geoms = sample_geometries(cfg.phantom_views, cfg.detector_size,
                                         cfg.detector_size);
    for (int p = 0; p < count; ++p) {
      PhantomVolume vol;
      ComponentMasks masks;
      synth_phantom(seed_base + (uint64_t)p, shape, cfg.phantom_n_ribs, vol, masks);
      PhantomVolume suppressed = inpaint_ribs(vol, masks.rib);
      for (const auto& g : geoms) {
        DrrSample drr = render_drr_sample(vol, suppressed, masks, g);
        DomainStyle style = cfg.style;
        style.seed = style_seed_base + (uint64_t)ds.cxr.size();
        ds.cxr.push_back(render_pseudo_cxr(drr, style));
        ds.drr.push_back(std::move(drr));
      }
    }
    save_dataset(ds, dir.string());
    return ds;
  };

  const Dataset train_ds = build_split(cfg.phantom_count_train, cfg.phantom_seed,
                                       fs::path(out) / "train", cfg.style.seed);
  const Dataset eval_ds =
      build_split(cfg.phantom_count_eval, cfg.phantom_seed + 1000,
                  fs::path(out) / "eval", cfg.style.seed + 100000);

  std::ofstream manifest(fs::path(out) / "manifest.txt");
  manifest << "ribsup-manifest v1\n";
  manifest << "train_phantoms " << cfg.phantom_count_train << "\n";
  manifest << "eval_phantoms " << cfg.phantom_count_eval << "\n";
  manifest << "views_per_phantom " << cfg.phantom_views << "\n";
  manifest << "train_drr_samples " << train_ds.drr.size() << "\n";
  manifest << "train_cxr_samples " << train_ds.cxr.size() << "\n";
  manifest << "eval_drr_samples " << eval_ds.drr.size() << "\n";
  manifest << "eval_cxr_samples " << eval_ds.cxr.size() << "\n";
  manifest << "phantom_seed " << cfg.phantom_seed << "\n";
  manifest << "style.gamma " << cfg.style.gamma << "\n";
  manifest << "style.gain " << cfg.style.gain << "\n";
  manifest << "style.bias " << cfg.style.bias << "\n";
  manifest << "style.noise_sigma " << cfg.style.noise_sigma << "\n";
  manifest << "style.blur_radius " << cfg.style.blur_radius << "\n";
  manifest << "style.seed " << cfg.style.seed << "\n";
  std::cout << "wrote " << train_ds.drr.size() << " train DRR / "
            << train_ds.cxr.size() << " train pseudo-CXR samples and "
            << eval_ds.drr.size() << " eval pairs under " << out << "\n";
  return 0;
}

std::string dataset_split_dir(const std::string& data, const char* split) {
  const fs::path sub = fs::path(data) / split;
  if (fs::is_directory(sub)) return sub.string();
  return data;  // assume `data` is a dataset directory itself
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out, const std::string& mode,
              const std::string& resume) {
  RunConfig cfg = load_config_opt(config_path);
  if (!mode.empty()) cfg.train.mode = mode_from_name(mode);
  const Dataset ds = load_dataset(dataset_split_dir(data, "train"));

  fs::create_directories(out);
  RunLock lock(out);
  echo_config(cfg, out);

  TrainState st = resume.empty() ? make_train_state(cfg.train)
                                 : load_train_state(resume, cfg.train);
  std::ofstream log(fs::path(out) / "train_log.txt",
                    resume.empty() ? std::ios::out : std::ios::app);
  try {
    const std::string final_ckpt = run_training(st, ds, out, log);
    std::cout << "final checkpoint: " << final_ckpt << "\n";
  } catch (const TrainAbortError& e) {
    log.flush();
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

void write_suppress_sample_dir(const fs::path& dir, const SuppressOutputs& o) {
  fs::create_directories(dir);
  std::ofstream hdr(dir / "header.txt");
  hdr << "ribsup-sample v1\nkind suppress\n";
  auto put = [&](const char* name, const Image& img) {
    hdr << "array " << name << " " << img.h << " " << img.w << " float32 "
        << name << ".raw\n";
    write_raw_f32((dir / (std::string(name) + ".raw")).string(), img);
  };
  put("suppressed", o.suppressed_full);
  put("residual", o.residual_net);
  put("bone", o.bone_net);
  put("lung", o.lung_net);
  put("bone_mask", o.bone_mask_net);
}

int cmd_suppress(const std::string& ckpt_path,
                 const std::vector<std::string>& inputs,
                 const std::string& out) {
  const CheckpointData ckpt = load_checkpoint(ckpt_path);
  fs::create_directories(out);
  int failures = 0;
  for (const auto& in : inputs) {
    try {
      if (fs::is_directory(in)) {
        // dataset sample directory
        const fs::path dir(in);
        Dataset one;
        // parse via the dataset loader conventions: read the image array
        std::ifstream hdr(dir / "header.txt");
        if (!hdr) throw std::runtime_error("missing header.txt in " + in);
        std::string line, name;
        int h = -1, w = -1;
        while (std::getline(hdr, line)) {
          std::istringstream ss(line);
          std::string tag;
          ss >> tag;
          if (tag != "array") continue;
          std::string aname, dtype, file;
          int ah, aw;
          ss >> aname >> ah >> aw >> dtype >> file;
          if (aname == "image") {
            h = ah;
            w = aw;
            name = file;
          }
        }
        if (h < 0) throw std::runtime_error("no 'image' array in " + in);
        const Image img = read_raw_f32((dir / name).string(), h, w);
        const SuppressOutputs o = suppress(img, ckpt);
        write_suppress_sample_dir(fs::path(out) / dir.filename(), o);
      } else if (fs::path(in).extension() == ".png") {
        const PngImage png = read_png_gray(in);
        const Image img = png_to_pm1(png);
        const SuppressOutputs o = suppress(img, ckpt);
        const std::string stem = fs::path(in).stem().string();
        write_png_gray((fs::path(out) / (stem + ".Q.png")).string(),
                       pm1_to_png(o.suppressed_full, png.bit_depth));
        write_png_gray((fs::path(out) / (stem + ".R.png")).string(),
                       pm1_to_png(o.residual_net, png.bit_depth));
        write_png_gray((fs::path(out) / (stem + ".B.png")).string(),
                       pm1_to_png(o.bone_net, png.bit_depth));
        // L and M live in [0,1]; remap for the shared [-1,1] PNG writer.
        auto to_pm1 = [](const Image& m) {
          Image t = m;
          for (auto& x : t.v) x = 2.0f * x - 1.0f;
          return t;
        };
        write_png_gray((fs::path(out) / (stem + ".L.png")).string(),
                       pm1_to_png(to_pm1(o.lung_net), png.bit_depth));
        write_png_gray((fs::path(out) / (stem + ".M.png")).string(),
                       pm1_to_png(to_pm1(o.bone_mask_net), png.bit_depth));
      } else {
        throw std::runtime_error("unsupported input (need .png or sample dir): " + in);
      }
    } catch (const std::exception& e) {
      std::cerr << "suppress failed for " << in << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures ? 1 : 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& data,
                 const std::vector<std::string>& outputs,
                 const std::string& report_path, bool include_input,
                 bool include_truth) {
  RunConfig cfg = load_config_opt(config_path);
  const Dataset ds = load_dataset(dataset_split_dir(data, "eval"));
  if (ds.cxr.empty()) throw std::runtime_error("no pseudo-CXR samples in " + data);

  std::vector<MethodEval> methods;
  if (include_input) {
    std::vector<Image> preds;
    for (const auto& s : ds.cxr) preds.push_back(s.image);
    methods.push_back(method_from_images("input", std::move(preds)));
  }
  if (include_truth) {
    std::vector<Image> preds;
    for (const auto& s : ds.cxr) preds.push_back(s.truth_suppressed);
    methods.push_back(method_from_images("truth", std::move(preds)));
  }
  for (const auto& entry : outputs) {
    const std::string name = fs::path(entry).filename().string().empty()
                                 ? entry
                                 : fs::path(entry).stem().string();
    if (fs::path(entry).extension() == ".ckpt") {
      methods.push_back(
          method_from_checkpoint(name, load_checkpoint(entry), ds));
      continue;
    }
    // Directory of suppress outputs aligned with the eval set by sample name.
    std::vector<Image> preds;
    std::vector<std::string> missing;
    for (size_t i = 0; i < ds.cxr.size(); ++i) {
      char dirname[32];
      std::snprintf(dirname, sizeof(dirname), "cxr_%06zu", i);
      const fs::path sdir = fs::path(entry) / dirname;
      if (!fs::is_directory(sdir)) {
        missing.push_back(dirname);
        continue;
      }
      preds.push_back(read_raw_f32((sdir / "suppressed.raw").string(),
                                   ds.cxr[i].image.h, ds.cxr[i].image.w));
    }
    if (!missing.empty()) {
      std::string msg = "outputs dir " + entry + " is missing samples:";
      for (const auto& m : missing) msg += " " + m;
      throw std::runtime_error(msg);
    }
    methods.push_back(method_from_images(name, std::move(preds)));
  }
  if (methods.empty()) throw std::runtime_error("no methods to evaluate");

  const MetricReport rep = evaluate_methods(ds.cxr, methods, cfg.lpips);
  std::ofstream rf(report_path);
  if (!rf) throw std::runtime_error("cannot write report: " + report_path);
  rf << rep.summary();
  std::ofstream cf(report_path + ".csv");
  cf << rep.to_csv();
  std::cout << rep.summary();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic-phantom rib suppression pipeline"};
  app.require_subcommand(1);

  std::string config, out, data, mode, resume, ckpt, report;
  std::vector<std::string> inputs, outputs;
  bool include_input = false, include_truth = false;

  auto* gen = app.add_subcommand("generate-data",
                                 "synthesize phantoms and render datasets");
  gen->add_option("--config", config, "config file");
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train the suppression model");
  tr->add_option("--config", config, "config file");
  tr->add_option("--data", data, "dataset root (or train split dir)")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->add_option("--mode", mode, "full|nRM|RM|RMDA (overrides config)");
  tr->add_option("--resume", resume, "checkpoint to resume from");

  auto* sup = app.add_subcommand("suppress", "run rib suppression");
  sup->add_option("--ckpt", ckpt, "checkpoint file")->required();
  sup->add_option("--in", inputs, "input PNGs or dataset sample dirs")
      ->required()
      ->expected(-1);
  sup->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "compute the metric report");
  ev->add_option("--config", config, "config file");
  ev->add_option("--data", data, "dataset root (or eval split dir)")->required();
  ev->add_option("--outputs", outputs, "method output dirs or .ckpt files")
      ->expected(-1);
  ev->add_option("--report", report, "report file")->required();
  ev->add_flag("--include-input", include_input, "add an 'input' baseline row");
  ev->add_flag("--include-truth", include_truth, "add a 'truth' reference row");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_generate_data(config, out);
    if (tr->parsed()) return cmd_train(config, data, out, mode, resume);
    if (sup->parsed()) return cmd_suppress(ckpt, inputs, out);
    if (ev->parsed())
      return cmd_evaluate(config, data, outputs, report, include_input,
                          include_truth);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
