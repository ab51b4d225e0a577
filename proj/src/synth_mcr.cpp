#include "darkforge/synth_mcr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <span>
#include <sstream>

#include "darkforge/errors.hpp"
#include "darkforge/raw_io.hpp"

namespace darkforge {

namespace fs = std::filesystem;
using nlohmann::json;

void NoiseModel::validate() const {
  if (!(shot_gain > 0.0)) throw ArgumentError("shot_gain must be positive");
  if (!(read_sigma >= 0.0)) throw ArgumentError("read_sigma must be non-negative");
  if (!(mono_sensitivity >= 1.0)) throw ArgumentError("mono_sensitivity must be >= 1");
  if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("bit depth must be 8 or 16");
}

const std::vector<double>& indoor_exposures() {
  static const std::vector<double> v = {1.0 / 256, 1.0 / 128, 1.0 / 64, 1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 3.0 / 8};
  return v;
}

const std::vector<double>& outdoor_exposures() {
  static const std::vector<double> v = {1.0 / 4096, 1.0 / 2048, 1.0 / 1024, 1.0 / 512,
                                        1.0 / 256,  1.0 / 128,  1.0 / 64,   1.0 / 32};
  return v;
}

void SceneSpec::validate() const {
  if (source.width == 0 || source.height == 0) throw ArgumentError("scene '" + id + "' has no source image");
  if (!(gt_exposure > 0.0)) throw ArgumentError("ground-truth exposure must be positive");
  if (input_exposures.empty()) throw ArgumentError("scene '" + id + "' has no input exposures");
  for (double e : input_exposures) {
    if (!(e > 0.0)) throw ArgumentError("exposures must be positive");
    if (e > gt_exposure) throw ArgumentError("input exposure exceeds ground-truth exposure");
  }
}

Plane rgb_to_mono(const RgbImage& rgb) {
  Plane out(rgb.width, rgb.height);
  const auto r = rgb.channel(0), g = rgb.channel(1), b = rgb.channel(2);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return out;
}

Plane rgb_to_mono(const PngImage& png) {
  if (png.channels != 3) {
    throw DimensionError("rgb_to_mono needs 3 channels, got " + std::to_string(png.channels));
  }
  return rgb_to_mono(png_to_rgb(png));
}

Plane mosaic(const RgbImage& rgb, CfaPhase phase) {
  if (rgb.width % 2 != 0 || rgb.height % 2 != 0) throw DimensionError("mosaic needs even dims");
  const auto off = cfa_offsets(phase);
  // colour channel sampled at each tile position
  std::size_t site[2][2];
  const std::size_t channel_of[4] = {0, 1, 1, 2};
  for (std::size_t k = 0; k < 4; ++k) site[off[k].dy][off[k].dx] = channel_of[k];
  Plane out(rgb.width, rgb.height);
  for (std::size_t y = 0; y < rgb.height; ++y)
    for (std::size_t x = 0; x < rgb.width; ++x) out.at(y, x) = rgb.at(site[y % 2][x % 2], y, x);
  return out;
}

BayerRaw expose(const Plane& signal, double exposure, double gt_exposure, const NoiseModel& noise,
                std::mt19937_64& rng, CfaPhase phase, double sensitivity) {
  noise.validate();
  if (!(exposure > 0.0) || !(gt_exposure > 0.0)) throw ArgumentError("exposure times must be positive");
  if (exposure > gt_exposure) throw ArgumentError("exposure exceeds ground-truth exposure");
  if (!(sensitivity >= 1.0)) throw ArgumentError("sensitivity must be >= 1");

  BayerRaw out;
  out.width = signal.width;
  out.height = signal.height;
  out.bit_depth = noise.bit_depth;
  out.black_level = 0;
  out.white_level = (1u << noise.bit_depth) - 1u;
  out.cfa_phase = phase;
  out.exposure_time = exposure;
  out.data.resize(signal.data.size());

  const double scale = sensitivity * exposure / gt_exposure;
  const double max_code = out.white_level;
  std::normal_distribution<double> read(0.0, 1.0);
  for (std::size_t i = 0; i < signal.data.size(); ++i) {
    const double mean_e = std::max(0.0, signal.data[i] * scale) * noise.shot_gain;
    double v = 0.0;
    if (mean_e > 0.0) {
      std::poisson_distribution<long long> shot(mean_e);
      v = static_cast<double>(shot(rng)) / noise.shot_gain;
    }
    if (noise.read_sigma > 0.0) v += noise.read_sigma * read(rng);
    out.data[i] = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * max_code));
  }
  return out;
}

namespace {

void blur_channel(std::span<double> ch, std::size_t width, std::size_t height, double sigma) {
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (long i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (double& v : k) v /= sum;
  const long w = static_cast<long>(width), h = static_cast<long>(height);
  std::vector<double> tmp(ch.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * ch[static_cast<std::size_t>(y * w + std::clamp(x + i, 0L, w - 1))];
      tmp[static_cast<std::size_t>(y * w + x)] = acc;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0L, h - 1) * w + x)];
      ch[static_cast<std::size_t>(y * w + x)] = acc;
    }
}

}  // namespace

RgbImage make_scene(std::size_t width, std::size_t height, std::uint64_t seed, double blur_sigma) {
  if (width == 0 || height == 0) throw DimensionError("make_scene needs a non-empty frame");
  if (blur_sigma < 0.0) throw ArgumentError("blur_sigma must be non-negative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage img(width, height);
  const double bg[3] = {0.86 + 0.04 * u(rng), 0.86 + 0.04 * u(rng), 0.84 + 0.04 * u(rng)};
  for (std::size_t c = 0; c < 3; ++c) std::fill(img.channel(c).begin(), img.channel(c).end(), bg[c]);

  const double w = static_cast<double>(width), h = static_cast<double>(height);
  auto paint = [&](auto inside, const double colour[3]) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        if (inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = colour[c];
  };

  const int shapes = 3 + static_cast<int>(u(rng) * 3.0);
  for (int s = 0; s < shapes; ++s) {
    const double colour[3] = {0.1 + 0.7 * u(rng), 0.1 + 0.7 * u(rng), 0.1 + 0.7 * u(rng)};
    const double cx = w * (0.15 + 0.7 * u(rng)), cy = h * (0.15 + 0.7 * u(rng));
    const double rx = w * (0.06 + 0.14 * u(rng)), ry = h * (0.06 + 0.14 * u(rng));
    if (s % 2 == 0) {
      paint([&](double x, double y) { return std::abs(x - cx) < rx && std::abs(y - cy) < ry; }, colour);
    } else {
      paint([&](double x, double y) { return (x - cx) * (x - cx) / (rx * rx) + (y - cy) * (y - cy) / (ry * ry) < 1.0; },
            colour);
    }
  }

  // smooth gradient patch along the bottom edge
  const std::size_t y0 = height * 3 / 4;
  for (std::size_t y = y0; y < height; ++y)
    for (std::size_t x = 0; x < width / 2; ++x) {
      const double t = static_cast<double>(x) / (w / 2.0);
      img.at(0, y, x) = 0.2 + 0.6 * t;
      img.at(1, y, x) = 0.3 + 0.4 * t;
      img.at(2, y, x) = 0.7 - 0.5 * t;
    }
  if (blur_sigma > 0.0)
    for (std::size_t c = 0; c < 3; ++c) blur_channel(img.channel(c), width, height, blur_sigma);
  return img;
}

// ---------------------------------------------------------------------------

namespace {

std::mt19937_64 capture_stream(std::uint64_t seed, std::size_t scene, std::size_t exposure, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(scene), static_cast<std::uint32_t>(exposure), tag};
  return std::mt19937_64(seq);
}

json to_json(const ManifestEntry& e) {
  return {{"input_raw", e.input_raw}, {"input_meta", e.input_meta}, {"mono_gt", e.mono_gt},
          {"rgb_gt", e.rgb_gt},       {"ratio", e.ratio},           {"scene_id", e.scene_id},
          {"exposure", e.exposure},   {"gt_exposure", e.gt_exposure}};
}

std::string exposure_tag(std::size_t index) {
  std::ostringstream os;
  os << 'e' << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

Manifest generate_dataset(const std::vector<SceneSpec>& scenes, const NoiseModel& noise, const fs::path& out_dir) {
  noise.validate();
  if (scenes.empty()) throw ArgumentError("generate_dataset needs at least one scene");
  for (const auto& s : scenes) s.validate();
  fs::create_directories(out_dir);

  Manifest manifest;
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const SceneSpec& scene = scenes[si];
    const std::string id = scene.id.empty() ? "scene" + std::to_string(si) : scene.id;
    const Plane colour_signal = mosaic(scene.source, scene.cfa_phase);

    const std::string mono_name = id + "_mono_gt.raw";
    auto mono_rng = capture_stream(noise.seed, si, 0, 0x4d4f4e4f);
    BayerRaw mono = expose(rgb_to_mono(scene.source), scene.gt_exposure, scene.gt_exposure, noise, mono_rng,
                           CfaPhase::Mono, noise.mono_sensitivity);
    write_raw(out_dir / mono_name, mono);

    const std::string rgb_name = id + "_rgb_gt.png";
    write_png(out_dir / rgb_name, scene.source, 8);

    for (std::size_t ei = 0; ei < scene.input_exposures.size(); ++ei) {
      const double exposure = scene.input_exposures[ei];
      auto rng = capture_stream(noise.seed, si, ei + 1, 0x434f4c52);
      const BayerRaw input = expose(colour_signal, exposure, scene.gt_exposure, noise, rng, scene.cfa_phase);
      const std::string raw_name = id + "_" + exposure_tag(ei) + ".raw";
      write_raw(out_dir / raw_name, input);
      ManifestEntry e;
      e.input_raw = raw_name;
      e.input_meta = sidecar_path(raw_name).string();
      e.mono_gt = mono_name;
      e.rgb_gt = rgb_name;
      e.ratio = compute_ratio(exposure, scene.gt_exposure);
      e.scene_id = id;
      e.exposure = exposure;
      e.gt_exposure = scene.gt_exposure;
      manifest.entries.push_back(std::move(e));
    }
  }

  json list = json::array();
  for (const auto& e : manifest.entries) list.push_back(to_json(e));
  std::ofstream os(out_dir / kManifestName);
  if (!os) throw std::runtime_error("cannot write " + (out_dir / kManifestName).string());
  os << list.dump(2) << '\n';
  return manifest;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream is(path);
  if (!is) throw LoadError("missing manifest " + path.string());
  Manifest m;
  try {
    const json list = json::parse(is);
    for (const auto& j : list) {
      ManifestEntry e;
      e.input_raw = j.at("input_raw").get<std::string>();
      e.input_meta = j.value("input_meta", sidecar_path(e.input_raw).string());
      e.mono_gt = j.at("mono_gt").get<std::string>();
      e.rgb_gt = j.at("rgb_gt").get<std::string>();
      e.ratio = j.at("ratio").get<double>();
      e.scene_id = j.value("scene_id", std::string());
      e.exposure = j.value("exposure", 0.0);
      e.gt_exposure = j.value("gt_exposure", 0.0);
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  return m;
}

McrDataset::McrDataset(fs::path dir) : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {}

TrainingSample McrDataset::get(std::size_t index) const {
  const ManifestEntry& e = manifest_.entries.at(index);
  TrainingSample s;
  s.input = read_raw(dir_ / e.input_raw);
  if (s.input.cfa_phase == CfaPhase::Mono) throw LoadError((dir_ / e.input_raw).string() + ": input must be a colour mosaic");
  const BayerRaw mono = read_raw(dir_ / e.mono_gt);
  if (mono.cfa_phase != CfaPhase::Mono) throw LoadError((dir_ / e.mono_gt).string() + ": ground truth is not MONO");
  if (mono.width != s.input.width || mono.height != s.input.height) {
    throw LoadError((dir_ / e.mono_gt).string() + ": size differs from " + e.input_raw);
  }
  s.mono_gt = MonoRaw(normalize(mono));
  const PngImage png = read_png(dir_ / e.rgb_gt);
  if (png.width != s.input.width || png.height != s.input.height) {
    throw LoadError((dir_ / e.rgb_gt).string() + ": size differs from " + e.input_raw);
  }
  s.rgb_gt = png_to_rgb(png);
  s.ratio = e.ratio;
  return s;
}

McrDataset load_mcr(const fs::path& dir) { return McrDataset(dir); }

}  // namespace darkforge
