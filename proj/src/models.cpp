#include "darkforge/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "darkforge/errors.hpp"
#include "darkforge/nn_blocks.hpp"

namespace darkforge {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (depth < 1) throw ArgumentError("model depth must be >= 1");
  if (base_channels < 4) throw ArgumentError("base_channels must be >= 4");
  if (depth > 8) throw ArgumentError("model depth above 8 is not supported");
}

std::size_t ModelConfig::input_channels() const {
  if (input_space == InputSpace::SRGB) return 12;
  return use_packraw ? 4 : 1;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"base_channels", c.base_channels},
           {"depth", c.depth},
           {"use_ca", c.use_ca},
           {"use_ratio", c.use_ratio},
           {"use_packraw", c.use_packraw},
           {"use_dbf", c.use_dbf},
           {"loss", c.loss == LossKind::L1 ? "L1" : "L2"},
           {"input_space", c.input_space == InputSpace::Raw ? "raw" : "sRGB"}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.depth = j.value("depth", d.depth);
  c.use_ca = j.value("use_ca", d.use_ca);
  c.use_ratio = j.value("use_ratio", d.use_ratio);
  c.use_packraw = j.value("use_packraw", d.use_packraw);
  c.use_dbf = j.value("use_dbf", d.use_dbf);
  const std::string loss = j.value("loss", std::string("L1"));
  if (loss == "L1") {
    c.loss = LossKind::L1;
  } else if (loss == "L2") {
    c.loss = LossKind::L2;
  } else {
    throw ArgumentError("unknown loss '" + loss + "'");
  }
  const std::string space = j.value("input_space", std::string("raw"));
  if (space == "raw") {
    c.input_space = InputSpace::Raw;
  } else if (space == "sRGB" || space == "srgb") {
    c.input_space = InputSpace::SRGB;
  } else {
    throw ArgumentError("unknown input_space '" + space + "'");
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"baseline", "wo-ca", "wo-ratio", "wo-packraw",
                                                 "l2",       "wo-dbf", "srgb"};
  return names;
}

ModelConfig preset_config(std::string_view name) {
  ModelConfig c;
  if (name == "baseline") return c;
  if (name == "wo-ca") {
    c.use_ca = false;
  } else if (name == "wo-ratio") {
    c.use_ratio = false;
  } else if (name == "wo-packraw") {
    c.use_packraw = false;
  } else if (name == "l2") {
    c.loss = LossKind::L2;
  } else if (name == "wo-dbf") {
    c.use_dbf = false;
  } else if (name == "srgb") {
    c.input_space = InputSpace::SRGB;
  } else {
    throw ArgumentError("unknown preset '" + std::string(name) + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameter store

void ModelParams::add(std::string name, Tensor t) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(t));
}

const Tensor& ModelParams::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + std::string(name));
  return entries_[it->second].second;
}

bool ModelParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ModelParams::count() const { return count(""); }

std::size_t ModelParams::count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) {
    if (name.starts_with(prefix)) n += t.numel();
  }
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, t] : entries_) {
    Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    out.add(name, c);
  }
  return out;
}

namespace {

std::size_t width_at(const ModelConfig& c, std::size_t level) { return c.base_channels << level; }

// Every tensor draws from its own stream keyed by (seed, name), so toggling
// one component leaves the initial values of all others untouched.
std::mt19937_64 stream_for(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

class Builder {
 public:
  Builder(ModelParams& p, std::uint64_t seed) : p_(p), seed_(seed) {}

  void conv(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride = 1) {
    auto rng = stream_for(seed_, name);
    auto c = nn::make_conv(c_in, c_out, k, stride, k / 2, rng);
    p_.add(name + ".weight", c.weight);
    p_.add(name + ".bias", c.bias);
  }

  // Output layer: small weights around a mid-range bias, so the first
  // predictions already sit inside [0, 1].
  void head(const std::string& name, std::size_t c_in, std::size_t c_out) {
    auto rng = stream_for(seed_, name);
    auto c = nn::make_conv(c_in, c_out, 1, 1, 0, rng);
    for (double& w : c.weight.data()) w *= kHeadWeightScale;
    for (double& b : c.bias.data()) b = kHeadBiasInit;
    p_.add(name + ".weight", c.weight);
    p_.add(name + ".bias", c.bias);
  }

  void upconv(const std::string& name, std::size_t c_in, std::size_t c_out) {
    auto rng = stream_for(seed_, name);
    auto c = nn::make_transposed_conv2(c_in, c_out, rng);
    p_.add(name + ".weight", c.weight);
    p_.add(name + ".bias", c.bias);
  }

  void attention(const std::string& name, std::size_t channels) {
    auto rng = stream_for(seed_, name);
    auto ca = nn::make_channel_attention(channels, nn::ca_reduction(channels), rng);
    p_.add(name + ".w_reduce", ca.w_reduce);
    p_.add(name + ".b_reduce", ca.b_reduce);
    p_.add(name + ".w_expand", ca.w_expand);
    p_.add(name + ".b_expand", ca.b_expand);
  }

  void encoder(const std::string& prefix, std::size_t in_ch, const ModelConfig& c) {
    for (std::size_t i = 0; i < c.depth; ++i) {
      const std::string lvl = prefix + ".enc" + std::to_string(i);
      conv(lvl + ".conv1", in_ch, width_at(c, i), 3);
      conv(lvl + ".conv2", width_at(c, i), width_at(c, i), 3);
      in_ch = width_at(c, i);
    }
    conv(prefix + ".bottom.conv1", in_ch, width_at(c, c.depth), 3);
    conv(prefix + ".bottom.conv2", width_at(c, c.depth), width_at(c, c.depth), 3);
  }

 private:
  ModelParams& p_;
  std::uint64_t seed_;
};

nn::Conv2dParams conv_of(const ModelParams& p, const std::string& name, std::size_t stride = 1) {
  const Tensor& w = p.at(name + ".weight");
  return {w, p.at(name + ".bias"), stride, w.dim(2) / 2};
}

nn::Conv2dParams upconv_of(const ModelParams& p, const std::string& name) {
  return {p.at(name + ".weight"), p.at(name + ".bias"), 2, 0};
}

nn::CAParams ca_of(const ModelParams& p, const std::string& name) {
  return {p.at(name + ".w_reduce"), p.at(name + ".b_reduce"), p.at(name + ".w_expand"), p.at(name + ".b_expand")};
}

Tensor conv_act(const Tensor& x, const ModelParams& p, const std::string& name) {
  return nn::leaky_relu(nn::conv2d(x, conv_of(p, name)));
}

struct Encoded {
  std::vector<Tensor> skips;
  Tensor bottom;
};

Encoded run_encoder(Tensor x, const ModelParams& p, const std::string& prefix, const ModelConfig& c) {
  Encoded e;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::string lvl = prefix + ".enc" + std::to_string(i);
    x = conv_act(conv_act(x, p, lvl + ".conv1"), p, lvl + ".conv2");
    e.skips.push_back(x);
    x = nn::maxpool2(x);
  }
  e.bottom = conv_act(conv_act(x, p, prefix + ".bottom.conv1"), p, prefix + ".bottom.conv2");
  return e;
}

// Applies the raw stem when packing is disabled, then checks the grid.
Tensor network_input(const Tensor& a_color, const ModelParams& p, const std::string& prefix,
                     const ModelConfig& c) {
  if (a_color.rank() != 4 || a_color.dim(1) != c.input_channels()) {
    throw DimensionError(prefix + ": expected colour input with " + std::to_string(c.input_channels()) +
                         " channels, got " + shape_str(a_color.shape()));
  }
  Tensor x = a_color;
  if (!c.use_packraw && c.input_space == InputSpace::Raw) {
    if (a_color.dim(2) % 2 != 0 || a_color.dim(3) % 2 != 0) {
      throw DimensionError(prefix + ": mosaic input must have even dims");
    }
    x = nn::leaky_relu(nn::conv2d(a_color, conv_of(p, prefix + ".stem", 2)));
  }
  const std::size_t m = c.spatial_multiple();
  if (x.dim(2) % m != 0 || x.dim(3) % m != 0) {
    throw DimensionError(prefix + ": packed extents " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " must be multiples of " + std::to_string(m));
  }
  return x;
}

Tensor finish(const Tensor& y, Mode mode) { return mode == Mode::Infer ? clamp(y, 0.0, 1.0) : y; }

Tensor plane_tensor(const Plane& p) {
  return Tensor::from_data({1, 1, p.height, p.width}, p.data);
}

Tensor packed_tensor(const PackedRaw& packed) {
  const std::size_t hw = packed.width() * packed.height();
  std::vector<double> data(4 * hw);
  for (std::size_t k = 0; k < 4; ++k) std::copy(packed.planes[k].data.begin(), packed.planes[k].data.end(), data.begin() + k * hw);
  return Tensor::from_data({1, 4, packed.height(), packed.width()}, std::move(data));
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.size() == 1) return items[0];
  Shape shape = items[0].shape();
  std::vector<double> data;
  for (const auto& t : items) {
    if (t.rank() != 4 || t.dim(0) != 1 || !std::equal(shape.begin() + 1, shape.end(), t.shape().begin() + 1)) {
      throw DimensionError("stack_inputs: mismatched sample shapes");
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  shape[0] = items.size();
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Bilinear sample of a packed plane located at tile offset (dy, dx), edge-clamped.
double sample_site(const Plane& p, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(p.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(p.width - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, p.height - 1), x1 = std::min(x0 + 1, p.width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) + fy * ((1 - fx) * p.at(y1, x0) + fx * p.at(y1, x1));
}

}  // namespace

ModelParams build_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  Builder b(p, seed);
  const std::size_t in_ch = config.input_channels();
  const bool stem = !config.use_packraw && config.input_space == InputSpace::Raw;
  const std::size_t enc_in = stem ? 4 : in_ch;

  if (config.use_dbf) {
    if (stem) b.conv("dbf.stem", 1, 4, 3, 2);
    b.encoder("dbf", enc_in, config);
    for (std::size_t i = config.depth; i-- > 0;) {
      const std::string lvl = "dbf.dec" + std::to_string(i);
      b.upconv(lvl + ".up", width_at(config, i + 1), width_at(config, i));
      b.conv(lvl + ".conv1", 2 * width_at(config, i), width_at(config, i), 3);
      b.conv(lvl + ".conv2", width_at(config, i), width_at(config, i), 3);
    }
    b.head("dbf.head", width_at(config, 0), 4);
  }

  if (stem) b.conv("dble.stem", 1, 4, 3, 2);
  b.encoder("dble.color", enc_in, config);
  b.encoder("dble.mono", 4, config);
  b.conv("dble.fuse", 2 * width_at(config, config.depth), width_at(config, config.depth), 3);
  for (std::size_t i = config.depth; i-- > 0;) {
    const std::string lvl = "dble.dec" + std::to_string(i);
    b.upconv(lvl + ".up", width_at(config, i + 1), width_at(config, i));
    if (config.use_ca) b.attention(lvl + ".ca", 3 * width_at(config, i));
    b.conv(lvl + ".conv1", 3 * width_at(config, i), width_at(config, i), 3);
    b.conv(lvl + ".conv2", width_at(config, i), width_at(config, i), 3);
  }
  b.head("dble.head", width_at(config, 0), 12);
  return p;
}

Tensor dbf_forward(const Tensor& a_color, const ModelParams& params, const ModelConfig& config, Mode mode) {
  if (!config.use_dbf) throw ContractError("dbf_forward called with use_dbf disabled");
  Tensor x = network_input(a_color, params, "dbf", config);
  Encoded e = run_encoder(x, params, "dbf", config);
  Tensor cur = e.bottom;
  for (std::size_t i = config.depth; i-- > 0;) {
    const std::string lvl = "dbf.dec" + std::to_string(i);
    Tensor up = nn::transposed_conv2(cur, upconv_of(params, lvl + ".up"));
    Tensor cat = nn::concat_channels({up, e.skips[i]});
    cur = conv_act(conv_act(cat, params, lvl + ".conv1"), params, lvl + ".conv2");
  }
  Tensor head = nn::conv2d(cur, conv_of(params, "dbf.head"));
  return finish(nn::depth_to_space(head, 2), mode);
}

Tensor dble_forward(const Tensor& a_color, const Tensor& a_mono, const ModelParams& params, const ModelConfig& config,
                    Mode mode) {
  Tensor x = network_input(a_color, params, "dble", config);
  if (a_mono.rank() != 4 || a_mono.dim(1) != 1 || a_mono.dim(0) != x.dim(0) || a_mono.dim(2) != 2 * x.dim(2) ||
      a_mono.dim(3) != 2 * x.dim(3)) {
    throw DimensionError("dble_forward: mono " + shape_str(a_mono.shape()) + " is not twice the colour grid " +
                         shape_str(x.shape()));
  }
  Encoded color = run_encoder(x, params, "dble.color", config);
  Encoded mono = run_encoder(nn::space_to_depth(a_mono, 2), params, "dble.mono", config);
  Tensor cur = conv_act(nn::concat_channels({color.bottom, mono.bottom}), params, "dble.fuse");
  for (std::size_t i = config.depth; i-- > 0;) {
    const std::string lvl = "dble.dec" + std::to_string(i);
    Tensor up = nn::transposed_conv2(cur, upconv_of(params, lvl + ".up"));
    Tensor cat = nn::concat_channels({up, color.skips[i], mono.skips[i]});
    if (config.use_ca) cat = nn::channel_attention(cat, ca_of(params, lvl + ".ca"));
    cur = conv_act(conv_act(cat, params, lvl + ".conv1"), params, lvl + ".conv2");
  }
  Tensor head = nn::conv2d(cur, conv_of(params, "dble.head"));
  return finish(nn::depth_to_space(head, 2), mode);
}

// ---------------------------------------------------------------------------
// Preprocessing

RgbImage demosaic_srgb(const Plane& mosaic, CfaPhase phase) {
  const PackedRaw packed = pack_raw(mosaic, phase);
  const auto off = cfa_offsets(phase);
  RgbImage out(mosaic.width, mosaic.height);
  auto interp = [&](std::size_t k, std::size_t y, std::size_t x) {
    return sample_site(packed.planes[k], (static_cast<double>(y) - static_cast<double>(off[k].dy)) / 2.0,
                       (static_cast<double>(x) - static_cast<double>(off[k].dx)) / 2.0);
  };
  for (std::size_t y = 0; y < mosaic.height; ++y)
    for (std::size_t x = 0; x < mosaic.width; ++x) {
      const double rgb[3] = {interp(kR, y, x), 0.5 * (interp(kG1, y, x) + interp(kG2, y, x)), interp(kB, y, x)};
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = std::pow(std::clamp(rgb[c], 0.0, 1.0), 1.0 / 2.2);
    }
  return out;
}

NetworkInput prepare_input(const BayerRaw& bayer, double ratio, const ModelConfig& config) {
  if (bayer.cfa_phase == CfaPhase::Mono) throw ArgumentError("pipeline input must be a colour mosaic");
  if (!(ratio >= 1.0)) throw ArgumentError("amplification ratio must be >= 1");
  const double gain = config.use_ratio ? ratio : 1.0;
  const Plane plane = normalize(bayer);
  const PackedRaw packed = amplify(pack_raw(plane, bayer.cfa_phase), gain);

  NetworkInput in;
  if (config.input_space == InputSpace::SRGB) {
    const RgbImage rgb = demosaic_srgb(unpack_raw(packed, bayer.cfa_phase), bayer.cfa_phase);
    Tensor t = Tensor::from_data({1, 3, rgb.height, rgb.width}, rgb.data);
    NoGradGuard ng;
    in.color = nn::space_to_depth(t, 2);
  } else if (config.use_packraw) {
    in.color = packed_tensor(packed);
  } else {
    in.color = plane_tensor(unpack_raw(packed, bayer.cfa_phase));
  }

  if (!config.use_dbf) {
    Plane green(packed.width(), packed.height());
    for (std::size_t i = 0; i < green.data.size(); ++i) {
      green.data[i] = 0.5 * (packed.planes[kG1].data[i] + packed.planes[kG2].data[i]);
    }
    NoGradGuard ng;
    in.green_mono = nn::upsample_bilinear2x(plane_tensor(green));
  }
  return in;
}

NetworkInput stack_inputs(const std::vector<NetworkInput>& items) {
  if (items.empty()) throw ArgumentError("stack_inputs: empty batch");
  NetworkInput out;
  std::vector<Tensor> colors, greens;
  for (const auto& it : items) {
    colors.push_back(it.color);
    if (it.green_mono.defined()) greens.push_back(it.green_mono);
  }
  out.color = stack_batch(colors);
  if (!greens.empty()) out.green_mono = stack_batch(greens);
  return out;
}

PipelineOutput forward_inputs(const NetworkInput& input, const ModelParams& params, const ModelConfig& config,
                              Mode mode) {
  PipelineOutput out;
  if (config.use_dbf) {
    out.mono = dbf_forward(input.color, params, config, Mode::Train);
    out.mono_from_dbf = true;
  } else {
    if (!input.green_mono.defined()) throw ContractError("missing green proxy for a model without DBF");
    out.mono = input.green_mono;
    out.mono_from_dbf = false;
  }
  out.rgb = dble_forward(input.color, out.mono, params, config, mode);
  if (mode == Mode::Infer && out.mono_from_dbf) out.mono = clamp(out.mono, 0.0, 1.0);
  return out;
}

PipelineOutput pipeline_forward(const BayerRaw& bayer, double ratio, const ModelParams& params,
                                const ModelConfig& config, Mode mode) {
  const NetworkInput in = prepare_input(bayer, ratio, config);
  if (mode == Mode::Infer) {
    NoGradGuard ng;
    return forward_inputs(in, params, config, mode);
  }
  return forward_inputs(in, params, config, mode);
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_model(std::ostream& os, const ModelConfig& config, const ModelParams& params) {
  os << json(config).dump() << '\n';
  write_tensors(os, params.entries());
}

void save_model(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_model(os, config, params);
}

LoadedModel read_model(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw LoadError("checkpoint missing config header");
  LoadedModel m;
  try {
    m.config = json::parse(header).get<ModelConfig>();
    m.config.validate();
  } catch (const json::exception& e) {
    throw LoadError(std::string("bad checkpoint config: ") + e.what());
  }
  const NamedTensors loaded = read_tensors(is);
  const ModelParams layout = build_params(m.config, 0);
  if (loaded.size() != layout.entries().size()) {
    throw LoadError("checkpoint holds " + std::to_string(loaded.size()) + " tensors, config expects " +
                    std::to_string(layout.entries().size()));
  }
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const auto& [name, t] = loaded[i];
    const auto& [ename, et] = layout.entries()[i];
    if (name != ename || t.shape() != et.shape()) {
      throw LoadError("checkpoint tensor " + name + " " + shape_str(t.shape()) + " does not match " + ename + " " +
                      shape_str(et.shape()));
    }
    Tensor copy = t;
    copy.set_requires_grad(true);
    m.params.add(name, copy);
  }
  return m;
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint " + path.string());
  try {
    return read_model(is);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace darkforge
