// darkforge command-line entry point.
//
//   darkforge synth     --out DIR [--scenes N] [--source PNG]... [noise flags]
//   darkforge align     --ref-src RAW --ref-dst RAW --bracket GLOB --out DIR
//   darkforge train     --data DIR --out DIR [--preset NAME] [--config JSON] [flags]
//   darkforge infer     --model CKPT (--input RAW... | --data DIR) --out DIR
//   darkforge eval      --pred DIR (--gt DIR | --data DIR) --out DIR
//   darkforge gradcheck [--out DIR]
//
// Configuration precedence: flags > --config JSON > preset > defaults.

#include <glob.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <set>
#include <sstream>

#include "darkforge/alignment.hpp"
#include "darkforge/errors.hpp"
#include "darkforge/gradcheck_registry.hpp"
#include "darkforge/metrics.hpp"
#include "darkforge/models.hpp"
#include "darkforge/parallel.hpp"
#include "darkforge/png_io.hpp"
#include "darkforge/raw_io.hpp"
#include "darkforge/synth_mcr.hpp"
#include "darkforge/training.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace darkforge::cli {

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void note(const std::string& msg) { std::cerr << "darkforge: " << msg << '\n'; }

// Flag overlay -----------------------------------------------------------------

/// Records which flags were given so they can be laid over the config file.
class Overlay {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, T& storage,
                   const std::string& help) {
    CLI::Option* opt = app->add_option(flag, storage, help);
    bindings_.push_back({key, opt, [&storage] { return json(storage); }});
    return opt;
  }

  CLI::Option* add_bool(CLI::App* app, const std::string& flag, const std::string& key, bool& storage,
                        const std::string& help) {
    CLI::Option* opt = app->add_option(flag, storage, help);
    bindings_.push_back({key, opt, [&storage] { return json(storage); }});
    return opt;
  }

  void apply(json& cfg) const {
    for (const auto& b : bindings_)
      if (b.opt->count() > 0) cfg[b.key] = b.value();
  }

 private:
  struct Binding {
    std::string key;
    CLI::Option* opt;
    std::function<json()> value;
  };
  std::vector<Binding> bindings_;
};

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config " + path.string());
  try {
    json j = json::parse(is);
    if (!j.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw UsageError("unknown key '" + key + "' in " + where);
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [key, _] : j.items()) out.insert(key);
  return out;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw std::runtime_error("glob failed for '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

std::string raw_stem(const fs::path& p) { return p.stem().string(); }

// synth ----------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  std::string config;
  std::vector<std::string> sources;
  std::size_t scenes = 1;
  std::size_t width = kDefaultWidth;
  std::size_t height = kDefaultHeight;
  double shot_gain = NoiseModel{}.shot_gain;
  double read_sigma = NoiseModel{}.read_sigma;
  double mono_sensitivity = NoiseModel{}.mono_sensitivity;
  unsigned bit_depth = 8;
  double gt_exposure = 0.375;
  double blur_sigma = 1.0;
  std::string bracket = "indoor";
  std::string cfa_phase = "RGGB";
  std::uint64_t seed = 0;
  Overlay overlay;
};

json synth_defaults() {
  const NoiseModel n;
  return {{"scenes", 1},
          {"width", kDefaultWidth},
          {"height", kDefaultHeight},
          {"shot_gain", n.shot_gain},
          {"read_sigma", n.read_sigma},
          {"mono_sensitivity", n.mono_sensitivity},
          {"bit_depth", n.bit_depth},
          {"gt_exposure", 0.375},
          {"blur_sigma", 1.0},
          {"bracket", "indoor"},
          {"cfa_phase", "RGGB"},
          {"seed", 0}};
}

void setup_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--out", a.out, "Output dataset directory")->required();
  app.add_option("--config", a.config, "JSON file with flat synth keys");
  app.add_option("--source", a.sources, "RGB PNG used as a scene (repeatable); procedural scenes otherwise");
  a.overlay.add(&app, "--scenes", "scenes", a.scenes, "Number of procedural scenes");
  a.overlay.add(&app, "--width", "width", a.width, "Procedural scene width");
  a.overlay.add(&app, "--height", "height", a.height, "Procedural scene height");
  a.overlay.add(&app, "--shot-gain", "shot_gain", a.shot_gain, "Poisson scale (electrons per unit)");
  a.overlay.add(&app, "--read-sigma", "read_sigma", a.read_sigma, "Gaussian read noise, normalised units");
  a.overlay.add(&app, "--mono-sensitivity", "mono_sensitivity", a.mono_sensitivity, "Mono photon bonus");
  a.overlay.add(&app, "--bit-depth", "bit_depth", a.bit_depth, "8 or 16");
  a.overlay.add(&app, "--gt-exposure", "gt_exposure", a.gt_exposure, "Ground-truth exposure (s)");
  a.overlay.add(&app, "--blur-sigma", "blur_sigma", a.blur_sigma, "Lens blur of procedural scenes (px)");
  a.overlay.add(&app, "--bracket", "bracket", a.bracket, "indoor or outdoor exposure list");
  a.overlay.add(&app, "--cfa", "cfa_phase", a.cfa_phase, "RGGB, GRBG, GBRG or BGGR");
  a.overlay.add(&app, "--seed", "seed", a.seed, "Noise and scene seed");
}

int run_synth(SynthArgs& a, RunManifest& rm) {
  json cfg = synth_defaults();
  if (!a.config.empty()) {
    json file = read_json_file(a.config);
    reject_unknown(file, keys_of(cfg), a.config);
    cfg.update(file);
  }
  a.overlay.apply(cfg);

  NoiseModel noise;
  noise.shot_gain = cfg.at("shot_gain").get<double>();
  noise.read_sigma = cfg.at("read_sigma").get<double>();
  noise.mono_sensitivity = cfg.at("mono_sensitivity").get<double>();
  noise.bit_depth = cfg.at("bit_depth").get<unsigned>();
  noise.seed = cfg.at("seed").get<std::uint64_t>();
  noise.validate();

  const std::string bracket = cfg.at("bracket").get<std::string>();
  if (bracket != "indoor" && bracket != "outdoor") throw UsageError("bracket must be indoor or outdoor");
  const CfaPhase phase = parse_cfa_phase(cfg.at("cfa_phase").get<std::string>());
  if (phase == CfaPhase::Mono) throw UsageError("input CFA phase cannot be MONO");

  std::vector<SceneSpec> scenes;
  auto base_spec = [&](std::string id) {
    SceneSpec s;
    s.id = std::move(id);
    s.gt_exposure = cfg.at("gt_exposure").get<double>();
    s.input_exposures = bracket == "indoor" ? indoor_exposures() : outdoor_exposures();
    s.cfa_phase = phase;
    return s;
  };
  if (!a.sources.empty()) {
    for (const auto& src : a.sources) {
      SceneSpec s = base_spec(fs::path(src).stem().string());
      s.source = png_to_rgb(read_png(src));
      if (s.source.width % 2 || s.source.height % 2) throw DimensionError(src + ": scene dims must be even");
      scenes.push_back(std::move(s));
      rm.add_input(src);
    }
  } else {
    const auto count = cfg.at("scenes").get<std::size_t>();
    if (count == 0) throw UsageError("--scenes must be positive");
    for (std::size_t i = 0; i < count; ++i) {
      std::ostringstream id;
      id << "scene" << std::setw(3) << std::setfill('0') << i;
      SceneSpec s = base_spec(id.str());
      s.source = make_scene(cfg.at("width").get<std::size_t>(), cfg.at("height").get<std::size_t>(),
                            noise.seed * 1000003ULL + i, cfg.at("blur_sigma").get<double>());
      scenes.push_back(std::move(s));
    }
  }

  const Manifest m = generate_dataset(scenes, noise, a.out);
  rm.set_seed(noise.seed);
  rm.set_config(cfg);
  rm.add_output(a.out / kManifestName);
  rm.write(a.out);
  note("wrote " + std::to_string(m.entries.size()) + " pairs to " + a.out.string());
  return 0;
}

// align ----------------------------------------------------------------------

struct AlignArgs {
  fs::path ref_src, ref_dst, out;
  std::string bracket;
  RansacOptions ransac;
};

void setup_align(CLI::App& app, AlignArgs& a) {
  app.add_option("--ref-src", a.ref_src, "Best-exposure frame of the camera being aligned")->required();
  app.add_option("--ref-dst", a.ref_dst, "Matching frame of the reference camera")->required();
  app.add_option("--bracket", a.bracket, "Glob of .raw frames to warp")->required();
  app.add_option("--out", a.out, "Output directory")->required();
  app.add_option("--ransac-iters", a.ransac.iters, "RANSAC iterations")->capture_default_str();
  app.add_option("--inlier-px", a.ransac.inlier_px, "Inlier reprojection threshold (px)")->capture_default_str();
  app.add_option("--min-inliers", a.ransac.min_inliers, "Minimum consensus size")->capture_default_str();
  app.add_option("--seed", a.ransac.seed, "RANSAC seed")->capture_default_str();
}

int run_align(AlignArgs& a, RunManifest& rm) {
  const auto files = expand_glob(a.bracket);
  if (files.empty()) throw UsageError("--bracket matched no files: " + a.bracket);
  const BayerRaw ref_src = read_raw(a.ref_src);
  const BayerRaw ref_dst = read_raw(a.ref_dst);
  std::vector<BayerRaw> frames;
  for (const auto& f : files) {
    frames.push_back(read_raw(f));
    rm.add_input(f);
  }
  rm.add_input(a.ref_src);
  rm.add_input(a.ref_dst);

  const BracketAlignment result = align_bracket(ref_src, ref_dst, frames, a.ransac);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < files.size(); ++i) {
    const fs::path dst = a.out / files[i].filename();
    write_raw(dst, result.frames[i]);
    rm.add_output(dst);
  }

  const fs::path report = a.out / "align_report.csv";
  std::ofstream os(report);
  if (!os) throw std::runtime_error("cannot write " + report.string());
  os << "file,matches,inliers,inlier_ratio,mean_reproj_px";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) os << ",h" << r << c;
  os << '\n' << std::setprecision(17);
  const AlignReport& rep = result.report;
  for (const auto& f : files) {
    os << f.filename().string() << ',' << rep.matches << ',' << rep.inliers << ',' << rep.inlier_ratio << ','
       << rep.mean_reproj_error;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) os << ',' << rep.h.h(r, c);
    os << '\n';
  }
  rm.add_output(report);
  rm.set_seed(a.ransac.seed);
  rm.set_config({{"ransac_iters", a.ransac.iters},
                 {"inlier_px", a.ransac.inlier_px},
                 {"min_inliers", a.ransac.min_inliers},
                 {"bracket", a.bracket}});
  rm.write(a.out);
  note("aligned " + std::to_string(files.size()) + " frames, " + std::to_string(rep.inliers) + "/" +
       std::to_string(rep.matches) + " inliers");
  return 0;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  fs::path data, out;
  std::string config;
  std::string preset;
  std::size_t log_every = 50;
  // flag storage
  std::size_t base_channels = 0, depth = 0;
  bool use_ca = true, use_ratio = true, use_packraw = true, use_dbf = true;
  std::string loss, input_space;
  double lr_initial = 0, lr_after_converge = 0, weight_decay = 0;
  std::size_t lr_switch_step = 0, crop = 0, batch = 0, steps = 0, checkpoint_every = 0;
  std::uint64_t seed = 0;
  Overlay overlay;
};

void setup_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--data", a.data, "Dataset directory with manifest.json")->required();
  app.add_option("--out", a.out, "Output directory")->required();
  app.add_option("--config", a.config, "JSON file with flat model/training keys");
  app.add_option("--preset", a.preset, "Ablation preset")->check(CLI::IsMember(preset_names()));
  app.add_option("--log-every", a.log_every, "Progress line every N steps (0 = quiet)")->capture_default_str();
  auto& o = a.overlay;
  o.add(&app, "--base-channels", "base_channels", a.base_channels, "Width of the first U-net level");
  o.add(&app, "--depth", "depth", a.depth, "Number of down-sampling levels");
  o.add_bool(&app, "--use-ca", "use_ca", a.use_ca, "Channel attention in DBLE (true/false)");
  o.add_bool(&app, "--use-ratio", "use_ratio", a.use_ratio, "Amplify input by the exposure ratio");
  o.add_bool(&app, "--use-packraw", "use_packraw", a.use_packraw, "Pack the mosaic into 4 planes");
  o.add_bool(&app, "--use-dbf", "use_dbf", a.use_dbf, "Run the DBF stage");
  o.add(&app, "--loss", "loss", a.loss, "L1 or L2");
  o.add(&app, "--input-space", "input_space", a.input_space, "raw or sRGB");
  o.add(&app, "--lr", "lr_initial", a.lr_initial, "Initial learning rate");
  o.add(&app, "--lr-after", "lr_after_converge", a.lr_after_converge, "Learning rate after the switch");
  o.add(&app, "--lr-switch-step", "lr_switch_step", a.lr_switch_step, "Step of the LR drop");
  o.add(&app, "--weight-decay", "weight_decay", a.weight_decay, "L2 weight decay");
  o.add(&app, "--crop", "crop", a.crop, "Square crop size in sensor pixels");
  o.add(&app, "--batch", "batch", a.batch, "Crops per step");
  o.add(&app, "--steps", "steps", a.steps, "Optimiser steps");
  o.add(&app, "--checkpoint-every", "checkpoint_every", a.checkpoint_every, "Checkpoint period (0 = off)");
  o.add(&app, "--seed", "seed", a.seed, "Init, crop and sampling seed");
}

struct ResolvedTrain {
  ModelConfig model;
  TrainConfig train;
  json snapshot;
};

ResolvedTrain resolve_train(TrainArgs& a) {
  json file = a.config.empty() ? json::object() : read_json_file(a.config);
  std::string preset = "baseline";
  if (file.contains("preset")) preset = file.at("preset").get<std::string>();
  if (!a.preset.empty()) preset = a.preset;

  json model_defaults = preset_config(preset);
  json train_defaults = TrainConfig{};
  train_defaults.erase("lr_switch_step");
  std::set<std::string> allowed = keys_of(model_defaults);
  for (const auto& k : keys_of(train_defaults)) allowed.insert(k);
  allowed.insert("lr_switch_step");
  allowed.insert("preset");
  reject_unknown(file, allowed, a.config);

  json cfg = model_defaults;
  cfg.update(train_defaults);
  file.erase("preset");
  cfg.update(file);
  a.overlay.apply(cfg);

  ResolvedTrain r;
  r.model = cfg.get<ModelConfig>();
  r.train = cfg.get<TrainConfig>();
  r.model.validate();
  r.train.validate();
  r.snapshot = cfg;
  r.snapshot["preset"] = preset;
  r.snapshot["lr_switch_step"] = r.train.switch_step();
  return r;
}

int run_train(TrainArgs& a, RunManifest& rm) {
  ResolvedTrain r = resolve_train(a);
  const McrDataset dataset(a.data);
  rm.add_input(a.data / kManifestName);
  rm.set_seed(r.train.seed);
  rm.set_config(r.snapshot);

  TrainOptions opts;
  opts.out_dir = a.out;
  if (a.log_every > 0) {
    const std::size_t every = a.log_every;
    const std::size_t total = r.train.steps;
    opts.observer = [every, total](const StepView& v) {
      if (v.record.step % every == 0 || v.record.step + 1 == total) {
        std::ostringstream os;
        os << "step " << v.record.step << "/" << total << " lr " << v.record.lr << " loss " << v.record.loss_total;
        if (v.record.loss_mono) os << " (mono " << *v.record.loss_mono << ", rgb " << v.record.loss_rgb << ")";
        note(os.str());
      }
    };
  }
  const TrainResult result = train(dataset, r.model, r.train, opts);
  rm.add_output(a.out / "model.dfck");
  rm.add_output(a.out / "loss.csv");
  rm.write(a.out);
  note("final loss " + std::to_string(result.curve.back().loss_total) + ", checkpoint " +
       (a.out / "model.dfck").string());
  return 0;
}

// infer ----------------------------------------------------------------------

struct InferArgs {
  fs::path model, out, data;
  std::vector<std::string> inputs;
  std::optional<double> ratio;
  std::optional<double> gt_exposure;
  unsigned bit_depth = 8;
};

void setup_infer(CLI::App& app, InferArgs& a) {
  app.add_option("--model", a.model, "Checkpoint written by train")->required();
  app.add_option("--out", a.out, "Output directory")->required();
  auto* in = app.add_option("--input", a.inputs, "Input .raw frames");
  auto* data = app.add_option("--data", a.data, "Dataset directory; ratios come from its manifest");
  in->excludes(data);
  app.add_option("--ratio", a.ratio, "Amplification ratio for --input frames");
  app.add_option("--gt-exposure", a.gt_exposure, "Derive the ratio from the sidecar exposure instead");
  app.add_option("--bit-depth", a.bit_depth, "PNG bit depth (8 or 16)")->check(CLI::IsMember({8u, 16u}));
}

/// Repeats the last 2x2 tile row/column so the frame reaches a multiple of `m`.
BayerRaw pad_to_multiple(const BayerRaw& f, std::size_t m) {
  const std::size_t h = (f.height + m - 1) / m * m, w = (f.width + m - 1) / m * m;
  if (h == f.height && w == f.width) return f;
  BayerRaw out = f;
  out.width = w;
  out.height = h;
  out.data.assign(w * h, 0);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = y < f.height ? y : f.height - 2 + (y - f.height) % 2;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = x < f.width ? x : f.width - 2 + (x - f.width) % 2;
      out.data[y * w + x] = f.data[sy * f.width + sx];
    }
  }
  return out;
}

Plane crop_tensor_plane(const Tensor& t, std::size_t c, std::size_t width, std::size_t height) {
  const std::size_t tw = t.dim(3), th = t.dim(2);
  Plane p(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) p.at(y, x) = t.data()[(c * th + y) * tw + x];
  return p;
}

int run_infer(InferArgs& a, RunManifest& rm) {
  if (a.inputs.empty() && a.data.empty()) throw UsageError("infer needs --input or --data");
  if (a.ratio && a.gt_exposure) throw UsageError("--ratio and --gt-exposure are mutually exclusive");
  const LoadedModel lm = load_model(a.model);
  rm.add_input(a.model);

  struct Job {
    fs::path raw;
    double ratio;
  };
  std::vector<Job> jobs;
  if (!a.data.empty()) {
    const Manifest m = read_manifest(a.data);
    for (const auto& e : m.entries) jobs.push_back({a.data / e.input_raw, e.ratio});
  } else {
    for (const auto& in : a.inputs) jobs.push_back({in, a.ratio.value_or(1.0)});
  }

  fs::create_directories(a.out);
  const std::size_t multiple = 2 * lm.config.spatial_multiple();
  for (auto& job : jobs) {
    const BayerRaw frame = read_raw(job.raw);
    if (a.gt_exposure) job.ratio = compute_ratio(frame.exposure_time, *a.gt_exposure);
    const BayerRaw padded = pad_to_multiple(frame, multiple);
    const PipelineOutput out = pipeline_forward(padded, job.ratio, lm.params, lm.config, Mode::Infer);

    RgbImage rgb(frame.width, frame.height);
    for (std::size_t c = 0; c < 3; ++c) {
      const Plane p = crop_tensor_plane(out.rgb, c, frame.width, frame.height);
      std::copy(p.data.begin(), p.data.end(), rgb.channel(c).begin());
    }
    const Plane mono = crop_tensor_plane(out.mono, 0, frame.width, frame.height);
    const std::string stem = raw_stem(job.raw);
    const fs::path mono_path = a.out / (stem + "_mono.png");
    const fs::path rgb_path = a.out / (stem + "_rgb.png");
    write_png(mono_path, mono, a.bit_depth);
    write_png(rgb_path, rgb, a.bit_depth);
    rm.add_input(job.raw);
    rm.add_output(mono_path);
    rm.add_output(rgb_path);
  }
  json cfg = lm.config;
  cfg["bit_depth"] = a.bit_depth;
  rm.set_config(cfg);
  rm.write(a.out);
  note("wrote " + std::to_string(2 * jobs.size()) + " images to " + a.out.string());
  return 0;
}

// eval -----------------------------------------------------------------------

struct EvalArgs {
  fs::path pred, gt, data, out;
  bool eight_bit = false;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--pred", a.pred, "Directory of predicted PNGs")->required();
  auto* gt = app.add_option("--gt", a.gt, "Directory of reference PNGs with matching names");
  auto* data = app.add_option("--data", a.data, "Dataset directory: compare infer outputs with its ground truths");
  gt->excludes(data);
  app.add_option("--out", a.out, "Output directory for metrics.csv")->required();
  app.add_flag("--eight-bit", a.eight_bit, "Also report metrics after quantising both images to 8 bits");
}

struct EvalRow {
  std::string name;
  metrics::MetricReport r;
  std::optional<metrics::MetricReport> r8;
};

EvalRow compare(const PngImage& pred, const PngImage& ref, bool eight_bit, const std::string& name) {
  if (pred.width != ref.width || pred.height != ref.height) throw DimensionError(name + ": size differs from reference");
  if (pred.channels != ref.channels) throw DimensionError(name + ": channel count differs from reference");
  EvalRow row;
  row.name = fs::path(name).filename().string();
  if (pred.channels == 1) {
    const Plane a = png_to_plane(pred), b = png_to_plane(ref);
    row.r = metrics::evaluate(a, b);
    if (eight_bit) row.r8 = metrics::evaluate(metrics::quantize8(a), metrics::quantize8(b));
  } else {
    const RgbImage a = png_to_rgb(pred), b = png_to_rgb(ref);
    row.r = metrics::evaluate(a, b);
    if (eight_bit) row.r8 = metrics::evaluate(metrics::quantize8(a), metrics::quantize8(b));
  }
  return row;
}

PngImage plane_as_png(const Plane& p) {
  PngImage img;
  img.width = p.width;
  img.height = p.height;
  img.channels = 1;
  img.bit_depth = 16;
  img.data = p.data;
  return img;
}

int run_eval(EvalArgs& a, RunManifest& rm) {
  if (a.gt.empty() && a.data.empty()) throw UsageError("eval needs --gt or --data");
  std::vector<EvalRow> rows;
  if (!a.gt.empty()) {
    std::vector<fs::path> preds;
    for (const auto& e : fs::directory_iterator(a.pred))
      if (e.is_regular_file() && e.path().extension() == ".png") preds.push_back(e.path());
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw UsageError("no PNG files in " + a.pred.string());
    for (const auto& p : preds) {
      const fs::path ref = a.gt / p.filename();
      if (!fs::exists(ref)) throw LoadError("missing reference " + ref.string());
      rows.push_back(compare(read_png(p), read_png(ref), a.eight_bit, p.string()));
      rm.add_input(p);
      rm.add_input(ref);
    }
  } else {
    const Manifest m = read_manifest(a.data);
    for (const auto& e : m.entries) {
      const std::string stem = fs::path(e.input_raw).stem().string();
      const fs::path rgb_pred = a.pred / (stem + "_rgb.png");
      const fs::path mono_pred = a.pred / (stem + "_mono.png");
      rows.push_back(compare(read_png(rgb_pred), read_png(a.data / e.rgb_gt), a.eight_bit, rgb_pred.string()));
      const PngImage mono_ref = plane_as_png(normalize(read_raw(a.data / e.mono_gt)));
      rows.push_back(compare(read_png(mono_pred), mono_ref, a.eight_bit, mono_pred.string()));
      rm.add_input(rgb_pred);
      rm.add_input(mono_pred);
    }
  }

  fs::create_directories(a.out);
  const fs::path csv = a.out / "metrics.csv";
  std::ofstream os(csv);
  if (!os) throw std::runtime_error("cannot write " + csv.string());
  os << "filename,psnr_db,ssim,checkerboard";
  if (a.eight_bit) os << ",psnr_db_8bit,ssim_8bit";
  os << '\n' << std::setprecision(10);
  double sp = 0, ss = 0, sc = 0, sp8 = 0, ss8 = 0;
  for (const auto& r : rows) {
    os << r.name << ',' << r.r.psnr_db << ',' << r.r.ssim << ',' << r.r.checkerboard;
    sp += r.r.psnr_db;
    ss += r.r.ssim;
    sc += r.r.checkerboard;
    if (r.r8) {
      os << ',' << r.r8->psnr_db << ',' << r.r8->ssim;
      sp8 += r.r8->psnr_db;
      ss8 += r.r8->ssim;
    }
    os << '\n';
  }
  const double n = static_cast<double>(rows.size());
  os << "mean," << sp / n << ',' << ss / n << ',' << sc / n;
  if (a.eight_bit) os << ',' << sp8 / n << ',' << ss8 / n;
  os << '\n';
  rm.add_output(csv);
  rm.set_config({{"eight_bit", a.eight_bit}});
  rm.write(a.out);
  note("evaluated " + std::to_string(rows.size()) + " images, mean PSNR " + std::to_string(sp / n) + " dB");
  return 0;
}

// gradcheck ------------------------------------------------------------------

struct GradArgs {
  fs::path out = ".";
  double tolerance = kGradCheckTolerance;
};

void setup_gradcheck(CLI::App& app, GradArgs& a) {
  app.add_option("--out", a.out, "Directory for gradcheck.csv")->capture_default_str();
  app.add_option("--tolerance", a.tolerance, "Max relative error")->capture_default_str();
}

int run_gradcheck(GradArgs& a, RunManifest& rm) {
  const auto results = run_gradchecks(gradcheck_registry(), a.tolerance);
  fs::create_directories(a.out);
  const fs::path csv = a.out / "gradcheck.csv";
  std::ofstream os(csv);
  if (!os) throw std::runtime_error("cannot write " + csv.string());
  os << "block,max_rel_error,seconds,passed\n";
  std::size_t failed = 0;
  for (const auto& r : results) {
    os << r.name << ',' << std::setprecision(6) << r.max_rel_error << ',' << r.seconds << ','
       << (r.passed ? "true" : "false") << '\n';
    if (!r.passed) {
      ++failed;
      note("gradcheck FAILED for " + r.name + " (" + std::to_string(r.max_rel_error) + ")");
    }
  }
  rm.add_output(csv);
  rm.set_config({{"tolerance", a.tolerance}});
  rm.write(a.out);
  note(std::to_string(results.size() - failed) + "/" + std::to_string(results.size()) + " blocks pass");
  return failed == 0 ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mono/colour dual-camera low-light raw enhancement"};
  app.require_subcommand(1);

  SynthArgs synth;
  AlignArgs align;
  TrainArgs train_args;
  InferArgs infer;
  EvalArgs eval;
  GradArgs grad;
  setup_synth(*app.add_subcommand("synth", "Generate a synthetic paired dataset"), synth);
  setup_align(*app.add_subcommand("align", "Register an exposure bracket to the reference camera"), align);
  setup_train(*app.add_subcommand("train", "Train DBF + DBLE"), train_args);
  setup_infer(*app.add_subcommand("infer", "Run a checkpoint on raw frames"), infer);
  setup_eval(*app.add_subcommand("eval", "PSNR / SSIM / checkerboard metrics"), eval);
  setup_gradcheck(*app.add_subcommand("gradcheck", "Finite-difference check of every block"), grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  apply_thread_limit();
  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  RunManifest rm(name, argc, argv);
  try {
    if (name == "synth") return run_synth(synth, rm);
    if (name == "align") return run_align(align, rm);
    if (name == "train") return run_train(train_args, rm);
    if (name == "infer") return run_infer(infer, rm);
    if (name == "eval") return run_eval(eval, rm);
    return run_gradcheck(grad, rm);
  } catch (const UsageError& e) {
    note(e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    note(std::string("error: ") + e.what());
    return kExitFailure;
  }
}

}  // namespace darkforge::cli

int main(int argc, char** argv) { return darkforge::cli::main(argc, argv); }
