#pragma once

// Synthetic mono/colour raw paired datasets: clean RGB scenes are mosaiced,
// exposure-scaled, corrupted with Poisson-Gaussian sensor noise and quantised,
// then written as .raw + sidecar files with a JSON manifest.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "darkforge/dataset.hpp"
#include "darkforge/image.hpp"
#include "darkforge/png_io.hpp"
#include "darkforge/raw_core.hpp"

namespace darkforge {

struct NoiseModel {
  double shot_gain = 2000.0;  ///< electrons per normalised unit
  double read_sigma = 0.002;  ///< normalised units
  std::uint64_t seed = 0;
  double mono_sensitivity = 1.5;  ///< photon bonus of the filterless sensor
  unsigned bit_depth = 8;

  void validate() const;
};

/// Exposure brackets of the indoor captures; the last one doubles as ground truth.
const std::vector<double>& indoor_exposures();
/// Outdoor brackets.
const std::vector<double>& outdoor_exposures();

struct SceneSpec {
  std::string id;
  RgbImage source;
  double gt_exposure = 0.375;
  std::vector<double> input_exposures = indoor_exposures();
  CfaPhase cfa_phase = CfaPhase::RGGB;

  void validate() const;
};

/// 0.299 R + 0.587 G + 0.114 B.
Plane rgb_to_mono(const RgbImage& rgb);
/// Same, from a decoded PNG; throws DimensionError unless it has 3 channels.
Plane rgb_to_mono(const PngImage& png);

/// Keeps one channel per pixel according to the CFA phase.
Plane mosaic(const RgbImage& rgb, CfaPhase phase);

/// Simulated capture of `signal` (clean, full-exposure, [0, 1]) at `exposure`.
/// `sensitivity` scales the signal before noise (mono frames use the model's
/// mono_sensitivity). The result is quantised to the model's bit depth.
BayerRaw expose(const Plane& signal, double exposure, double gt_exposure, const NoiseModel& noise,
                std::mt19937_64& rng, CfaPhase phase = CfaPhase::RGGB, double sensitivity = 1.0);

/// Procedural test scene: bright background with coloured shapes and a smooth
/// gradient patch, rendered through a Gaussian lens blur of `blur_sigma` px.
RgbImage make_scene(std::size_t width, std::size_t height, std::uint64_t seed, double blur_sigma = 1.0);

struct ManifestEntry {
  std::string input_raw;
  std::string input_meta;
  std::string mono_gt;
  std::string rgb_gt;
  double ratio = 1.0;
  std::string scene_id;
  double exposure = 0.0;
  double gt_exposure = 0.0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Writes per scene: one input .raw per exposure, a MONO ground-truth .raw at
/// the ground-truth exposure, an 8-bit RGB PNG, and finally manifest.json.
Manifest generate_dataset(const std::vector<SceneSpec>& scenes, const NoiseModel& noise,
                          const std::filesystem::path& out_dir);

Manifest read_manifest(const std::filesystem::path& dir);

/// Lazily loads triples listed in a dataset directory's manifest.
class McrDataset final : public Dataset {
 public:
  explicit McrDataset(std::filesystem::path dir);

  std::size_t size() const override { return manifest_.entries.size(); }
  TrainingSample get(std::size_t index) const override;
  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
};

McrDataset load_mcr(const std::filesystem::path& dir);

}  // namespace darkforge
