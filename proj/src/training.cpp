#include "darkforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "darkforge/errors.hpp"

namespace darkforge {

using nlohmann::json;

Tensor l1_loss(const Tensor& pred, const Tensor& target) { return reduce_mean(abs(sub(pred, target))); }

Tensor l2_loss(const Tensor& pred, const Tensor& target) { return reduce_mean(square(sub(pred, target))); }

Tensor loss_for(LossKind kind, const Tensor& pred, const Tensor& target) {
  return kind == LossKind::L1 ? l1_loss(pred, target) : l2_loss(pred, target);
}

void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr, double weight_decay) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("Adam state does not match the parameter list");
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ContractError("adam_step: parameter has no gradient");
  }
  ++state.t;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto w = p.data();
    auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + weight_decay * w[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------

CropWindow sample_crop(std::size_t height, std::size_t width, std::size_t crop, std::mt19937_64& rng) {
  if (crop == 0 || crop % 2 != 0) throw ArgumentError("crop size must be positive and even");
  if (crop > height || crop > width) {
    throw ArgumentError("crop " + std::to_string(crop) + " exceeds frame " + std::to_string(width) + "x" +
                        std::to_string(height));
  }
  std::uniform_int_distribution<std::size_t> dy(0, (height - crop) / 2);
  std::uniform_int_distribution<std::size_t> dx(0, (width - crop) / 2);
  CropWindow w;
  w.y = 2 * dy(rng);
  w.x = 2 * dx(rng);
  w.size = crop;
  return w;
}

namespace {

void check_window(std::size_t height, std::size_t width, const CropWindow& w) {
  if (w.y % 2 != 0 || w.x % 2 != 0 || w.size % 2 != 0) throw ArgumentError("crop window must be CFA aligned");
  if (w.y + w.size > height || w.x + w.size > width) throw ArgumentError("crop window outside frame");
}

template <class T>
void copy_window(const T* src, std::size_t src_width, const CropWindow& w, T* dst) {
  for (std::size_t y = 0; y < w.size; ++y) {
    const T* row = src + (w.y + y) * src_width + w.x;
    std::copy(row, row + w.size, dst + y * w.size);
  }
}

}  // namespace

BayerRaw crop_bayer(const BayerRaw& frame, const CropWindow& w) {
  check_window(frame.height, frame.width, w);
  BayerRaw out = frame;
  out.width = out.height = w.size;
  out.data.assign(w.size * w.size, 0);
  copy_window(frame.data.data(), frame.width, w, out.data.data());
  return out;
}

Plane crop_plane(const Plane& plane, const CropWindow& w) {
  check_window(plane.height, plane.width, w);
  Plane out(w.size, w.size);
  copy_window(plane.data.data(), plane.width, w, out.data.data());
  return out;
}

RgbImage crop_rgb(const RgbImage& img, const CropWindow& w) {
  check_window(img.height, img.width, w);
  RgbImage out(w.size, w.size);
  for (std::size_t c = 0; c < 3; ++c) copy_window(img.channel(c).data(), img.width, w, out.channel(c).data());
  return out;
}

PackedRaw crop_packed(const PackedRaw& packed, const CropWindow& w) {
  check_window(2 * packed.height(), 2 * packed.width(), w);
  const CropWindow half{w.y / 2, w.x / 2, w.size / 2};
  PackedRaw out;
  out.ratio_applied = packed.ratio_applied;
  for (std::size_t k = 0; k < 4; ++k) {
    out.planes[k] = Plane(half.size, half.size);
    copy_window(packed.planes[k].data.data(), packed.width(), half, out.planes[k].data.data());
  }
  return out;
}

TrainingSample crop_pair(const TrainingSample& sample, const CropWindow& w) {
  if (sample.mono_gt.width != sample.input.width || sample.mono_gt.height != sample.input.height ||
      sample.rgb_gt.width != sample.input.width || sample.rgb_gt.height != sample.input.height) {
    throw DimensionError("crop_pair: input and ground truths are not the same size");
  }
  TrainingSample out;
  out.input = crop_bayer(sample.input, w);
  out.mono_gt = MonoRaw(crop_plane(sample.mono_gt, w));
  out.rgb_gt = crop_rgb(sample.rgb_gt, w);
  out.ratio = sample.ratio;
  return out;
}

TrainingSample crop_pair(const TrainingSample& sample, std::size_t crop, std::mt19937_64& rng) {
  return crop_pair(sample, sample_crop(sample.input.height, sample.input.width, crop, rng));
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr_initial > 0.0) || !(lr_after_converge > 0.0)) throw ArgumentError("learning rates must be positive");
  if (crop == 0 || crop % 2 != 0) throw ArgumentError("crop must be positive and even");
  if (batch == 0) throw ArgumentError("batch must be positive");
  if (weight_decay < 0.0) throw ArgumentError("weight decay must be non-negative");
}

std::size_t TrainConfig::switch_step() const {
  return lr_switch_step.value_or(steps * 4 / 5);
}

double TrainConfig::lr_at(std::size_t step) const { return step < switch_step() ? lr_initial : lr_after_converge; }

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr_initial", c.lr_initial},   {"lr_after_converge", c.lr_after_converge},
           {"lr_switch_step", c.switch_step()}, {"weight_decay", c.weight_decay},
           {"crop", c.crop},               {"batch", c.batch},
           {"steps", c.steps},             {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every}};
  if (c.loss) j["loss"] = *c.loss == LossKind::L1 ? "L1" : "L2";
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr_initial = j.value("lr_initial", d.lr_initial);
  c.lr_after_converge = j.value("lr_after_converge", d.lr_after_converge);
  if (j.contains("lr_switch_step")) c.lr_switch_step = j.at("lr_switch_step").get<std::size_t>();
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.crop = j.value("crop", d.crop);
  c.batch = j.value("batch", d.batch);
  c.steps = j.value("steps", d.steps);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  if (j.contains("loss")) {
    const auto s = j.at("loss").get<std::string>();
    if (s != "L1" && s != "L2") throw ArgumentError("unknown loss '" + s + "'");
    c.loss = s == "L1" ? LossKind::L1 : LossKind::L2;
  }
}

Tensor mono_tensor(const Plane& mono) { return Tensor::from_data({1, 1, mono.height, mono.width}, mono.data); }

Tensor rgb_tensor(const RgbImage& rgb) { return Tensor::from_data({1, 3, rgb.height, rgb.width}, rgb.data); }

namespace {

Tensor stack(const std::vector<Tensor>& items) {
  if (items.size() == 1) return items[0];
  Shape shape = items[0].shape();
  std::vector<double> data;
  for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
  shape[0] = items.size();
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::string format_record(const LossRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.step << ',' << r.lr << ',';
  if (r.loss_mono) os << *r.loss_mono;
  os << ',' << r.loss_rgb << ',' << r.loss_total;
  return os.str();
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                  const TrainOptions& options) {
  model.validate();
  config.validate();
  if (dataset.size() == 0) throw ArgumentError("training dataset is empty");
  const LossKind loss_kind = config.loss.value_or(model.loss);

  TrainResult result;
  result.params = options.initial_params ? options.initial_params->clone() : build_params(model, config.seed);
  const std::vector<Tensor> tensors = result.params.tensors();
  AdamState adam;
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<NetworkInput> inputs;
    std::vector<Tensor> mono_targets, rgb_targets;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const TrainingSample crop = crop_pair(dataset.get(pick(rng)), config.crop, rng);
      inputs.push_back(prepare_input(crop.input, crop.ratio, model));
      mono_targets.push_back(mono_tensor(crop.mono_gt));
      rgb_targets.push_back(rgb_tensor(crop.rgb_gt));
    }
    const Tensor mono_target = stack(mono_targets);
    const Tensor rgb_target = stack(rgb_targets);

    result.params.zero_grad();
    const PipelineOutput out = forward_inputs(stack_inputs(inputs), result.params, model, Mode::Train);
    Tensor rgb_loss = loss_for(loss_kind, out.rgb, rgb_target);
    Tensor total = rgb_loss;
    LossRecord rec;
    rec.step = step;
    rec.lr = config.lr_at(step);
    rec.loss_rgb = rgb_loss.item();
    if (model.use_dbf) {
      Tensor mono_loss = loss_for(loss_kind, out.mono, mono_target);
      rec.loss_mono = mono_loss.item();
      total = add(mono_loss, rgb_loss);
    }
    rec.loss_total = total.item();
    if (!std::isfinite(rec.loss_total)) {
      throw NumericalError("non-finite loss at step " + std::to_string(step) + " (" + format_record(rec) + ")");
    }
    if (options.observer) options.observer(StepView{rec, out, mono_target, rgb_target, result.params});

    backward(total);
    adam_step(tensors, adam, rec.lr, config.weight_decay);
    result.curve.push_back(rec);

    if (options.out_dir && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      save_model(*options.out_dir / ("checkpoint_" + std::to_string(step + 1) + ".dfck"), model, result.params);
    }
  }

  if (options.out_dir) {
    save_model(*options.out_dir / "model.dfck", model, result.params);
    write_loss_csv(*options.out_dir / "loss.csv", result.curve);
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,lr,loss_mono,loss_rgb,loss_total\n";
  for (const auto& r : curve) os << format_record(r) << '\n';
}

}  // namespace darkforge
