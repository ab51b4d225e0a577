#pragma once

// The two networks of the enhancement pipeline:
//  * DBF  - U-net predicting a full-resolution monochrome raw frame from
//           packed colour raw.
//  * DBLE - dual-encoder U-net fusing colour raw with the monochrome frame
//           into an RGB image, with channel attention after every decoder
//           concatenation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "darkforge/checkpoint.hpp"
#include "darkforge/raw_core.hpp"
#include "darkforge/tensor.hpp"

namespace darkforge {

enum class LossKind { L1, L2 };
enum class InputSpace { Raw, SRGB };

struct ModelConfig {
  std::size_t base_channels = 32;
  std::size_t depth = 4;
  bool use_ca = true;
  bool use_ratio = true;
  bool use_packraw = true;
  bool use_dbf = true;
  LossKind loss = LossKind::L1;
  InputSpace input_space = InputSpace::Raw;

  void validate() const;
  /// Channel count of the colour input tensor fed to both networks.
  std::size_t input_channels() const;
  /// Packed-grid extents must be multiples of this.
  std::size_t spatial_multiple() const { return std::size_t{1} << depth; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Ablation presets: baseline, wo-ca, wo-ratio, wo-packraw, l2, wo-dbf, srgb.
ModelConfig preset_config(std::string_view name);
const std::vector<std::string>& preset_names();

/// Ordered, uniquely named store of every learnable tensor.
class ModelParams {
 public:
  void add(std::string name, Tensor t);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  const NamedTensors& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  /// Total number of scalar parameters.
  std::size_t count() const;
  /// Scalar parameters whose name starts with `prefix`.
  std::size_t count(std::string_view prefix) const;
  void zero_grad();
  ModelParams clone() const;

 private:
  NamedTensors entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

inline constexpr double kHeadWeightScale = 0.1;
inline constexpr double kHeadBiasInit = 0.5;

/// Deterministic He-uniform initialisation for the given config; both output
/// heads are scaled by kHeadWeightScale and biased to kHeadBiasInit.
ModelParams build_params(const ModelConfig& config, std::uint64_t seed);

enum class Mode { Train, Infer };

/// f_M: [N, C_in, H/2, W/2] (or [N, 1, H, W] without packing) -> [N, 1, H, W].
Tensor dbf_forward(const Tensor& a_color, const ModelParams& params, const ModelConfig& config,
                   Mode mode = Mode::Infer);

/// f_C: colour input plus [N, 1, H, W] monochrome -> [N, 3, H, W].
Tensor dble_forward(const Tensor& a_color, const Tensor& a_mono, const ModelParams& params,
                    const ModelConfig& config, Mode mode = Mode::Infer);

/// Network-ready tensors derived from a sensor frame.
struct NetworkInput {
  Tensor color;       ///< [N, C_in, H/2, W/2], or [N, 1, H, W] when packing is off
  Tensor green_mono;  ///< [N, 1, H, W] green-average proxy; only set when DBF is off
};

/// normalise -> pack (or not) -> amplify (when enabled) -> optional sRGB
/// preprocess. `ratio` must be >= 1.
NetworkInput prepare_input(const BayerRaw& bayer, double ratio, const ModelConfig& config);
NetworkInput stack_inputs(const std::vector<NetworkInput>& items);

struct PipelineOutput {
  Tensor mono;  ///< DBF output, or the green proxy when use_dbf is off
  Tensor rgb;
  bool mono_from_dbf = true;
};

PipelineOutput forward_inputs(const NetworkInput& input, const ModelParams& params, const ModelConfig& config,
                              Mode mode);
PipelineOutput pipeline_forward(const BayerRaw& bayer, double ratio, const ModelParams& params,
                                const ModelConfig& config, Mode mode = Mode::Infer);

/// Fixed bilinear demosaic of a normalised mosaic followed by a 1/2.2 gamma.
RgbImage demosaic_srgb(const Plane& mosaic, CfaPhase phase);

/// Model checkpoint: the config as one line of JSON, '\n', then a DFCK block.
void save_model(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);
void write_model(std::ostream& os, const ModelConfig& config, const ModelParams& params);

struct LoadedModel {
  ModelConfig config;
  ModelParams params;
};
LoadedModel load_model(const std::filesystem::path& path);
LoadedModel read_model(std::istream& is);

}  // namespace darkforge
