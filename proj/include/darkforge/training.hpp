#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "darkforge/dataset.hpp"
#include "darkforge/models.hpp"
#include "darkforge/tensor.hpp"

namespace darkforge {

// Losses ---------------------------------------------------------------------

/// mean |pred - target|
Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// mean (pred - target)^2
Tensor l2_loss(const Tensor& pred, const Tensor& target);
Tensor loss_for(LossKind kind, const Tensor& pred, const Tensor& target);

// Adam -----------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Throws ContractError if a parameter carries no gradient.
void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr, double weight_decay = 0.0);

// Cropping -------------------------------------------------------------------

/// Square window in sensor pixels; origin is always even.
struct CropWindow {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t size = 0;
};

/// Uniform over even origins such that the window fits. Throws ArgumentError
/// when crop is odd or larger than the frame.
CropWindow sample_crop(std::size_t height, std::size_t width, std::size_t crop, std::mt19937_64& rng);

BayerRaw crop_bayer(const BayerRaw& frame, const CropWindow& w);
Plane crop_plane(const Plane& plane, const CropWindow& w);
RgbImage crop_rgb(const RgbImage& img, const CropWindow& w);
/// Same window on the packed grid: origin / 2, size / 2.
PackedRaw crop_packed(const PackedRaw& packed, const CropWindow& w);

/// Applies one window to input mosaic and both ground truths.
TrainingSample crop_pair(const TrainingSample& sample, const CropWindow& w);
TrainingSample crop_pair(const TrainingSample& sample, std::size_t crop, std::mt19937_64& rng);

// Training loop --------------------------------------------------------------

struct TrainConfig {
  double lr_initial = 1e-4;
  double lr_after_converge = 1e-5;
  /// Step at which the LR drops; defaults to 80% of `steps`.
  std::optional<std::size_t> lr_switch_step;
  double weight_decay = 0.0;
  std::size_t crop = 512;
  std::size_t batch = 1;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  /// Overrides the model config's loss when set.
  std::optional<LossKind> loss;
  /// Write a checkpoint every N steps (0 disables) when an output dir is given.
  std::size_t checkpoint_every = 0;

  void validate() const;
  std::size_t switch_step() const;
  double lr_at(std::size_t step) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRecord {
  std::size_t step = 0;
  double lr = 0.0;
  std::optional<double> loss_mono;  ///< absent when the model has no DBF
  double loss_rgb = 0.0;
  double loss_total = 0.0;
};

/// Per-step view handed to an observer after the forward pass and before the update.
struct StepView {
  const LossRecord& record;
  const PipelineOutput& output;
  const Tensor& mono_target;
  const Tensor& rgb_target;
  const ModelParams& params;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const StepView&)> observer;
  /// Start from these parameters instead of build_params(model, seed).
  std::optional<ModelParams> initial_params;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> curve;
};

/// Joint training: loss(mono) + loss(rgb) per step (mono term dropped without
/// DBF), Adam, LR switch. Throws NumericalError on a non-finite loss.
TrainResult train(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                  const TrainOptions& options = {});

/// CSV with header step,lr,loss_mono,loss_rgb,loss_total (loss_mono empty when absent).
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& curve);

/// Tensor views of ground-truth images.
Tensor mono_tensor(const Plane& mono);
Tensor rgb_tensor(const RgbImage& rgb);

}  // namespace darkforge
