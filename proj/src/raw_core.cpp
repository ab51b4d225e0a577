#include "darkforge/raw_core.hpp"

#include <algorithm>
#include <cmath>

#include "darkforge/errors.hpp"

namespace darkforge {

std::string to_string(CfaPhase phase) {
  switch (phase) {
    case CfaPhase::RGGB: return "RGGB";
    case CfaPhase::GRBG: return "GRBG";
    case CfaPhase::GBRG: return "GBRG";
    case CfaPhase::BGGR: return "BGGR";
    case CfaPhase::Mono: return "MONO";
  }
  return "?";
}

CfaPhase parse_cfa_phase(std::string_view text) {
  if (text == "RGGB") return CfaPhase::RGGB;
  if (text == "GRBG") return CfaPhase::GRBG;
  if (text == "GBRG") return CfaPhase::GBRG;
  if (text == "BGGR") return CfaPhase::BGGR;
  if (text == "MONO") return CfaPhase::Mono;
  throw ArgumentError("unknown CFA phase '" + std::string(text) + "'");
}

std::array<TileOffset, 4> cfa_offsets(CfaPhase phase) {
  switch (phase) {
    case CfaPhase::RGGB: return {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
    case CfaPhase::GRBG: return {{{0, 1}, {0, 0}, {1, 1}, {1, 0}}};
    case CfaPhase::GBRG: return {{{1, 0}, {0, 0}, {1, 1}, {0, 1}}};
    case CfaPhase::BGGR: return {{{1, 1}, {0, 1}, {1, 0}, {0, 0}}};
    case CfaPhase::Mono: break;
  }
  throw ArgumentError("monochrome frames have no CFA tile");
}

void BayerRaw::validate() const {
  if (width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0) {
    throw DimensionError("raw frame must have positive even dims, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  }
  if (data.size() != width * height) {
    throw DimensionError("raw frame holds " + std::to_string(data.size()) + " samples, expected " +
                         std::to_string(width * height));
  }
  if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("bit depth must be 8 or 16");
  const std::uint32_t max_code = (1u << bit_depth) - 1u;
  if (white_level > max_code) throw ArgumentError("white level exceeds bit depth");
  if (black_level >= white_level) throw ArgumentError("black level must be below white level");
  if (!(exposure_time > 0.0)) throw ArgumentError("exposure time must be positive");
  if (std::any_of(data.begin(), data.end(), [this](std::uint16_t v) { return v > white_level; })) {
    throw ArgumentError("raw sample exceeds white level");
  }
}

Plane normalize(const BayerRaw& raw) {
  Plane out(raw.width, raw.height);
  const double black = raw.black_level;
  const double range = static_cast<double>(raw.white_level) - black;
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    out.data[i] = std::clamp((static_cast<double>(raw.data[i]) - black) / range, 0.0, 1.0);
  }
  return out;
}

PackedRaw pack_raw(const Plane& plane, CfaPhase phase) {
  if (plane.width % 2 != 0 || plane.height % 2 != 0 || plane.width == 0 || plane.height == 0) {
    throw DimensionError("pack_raw needs even dims, got " + std::to_string(plane.width) + "x" +
                         std::to_string(plane.height));
  }
  const auto offsets = cfa_offsets(phase);
  const std::size_t hw = plane.width / 2, hh = plane.height / 2;
  PackedRaw out;
  for (std::size_t k = 0; k < 4; ++k) {
    Plane& p = out.planes[k];
    p = Plane(hw, hh);
    for (std::size_t y = 0; y < hh; ++y)
      for (std::size_t x = 0; x < hw; ++x) p.at(y, x) = plane.at(2 * y + offsets[k].dy, 2 * x + offsets[k].dx);
  }
  return out;
}

Plane unpack_raw(const PackedRaw& packed, CfaPhase phase) {
  const std::size_t hw = packed.planes[0].width, hh = packed.planes[0].height;
  for (const auto& p : packed.planes) {
    if (p.width != hw || p.height != hh || p.data.size() != hw * hh) {
      throw DimensionError("unpack_raw: packed planes differ in size");
    }
  }
  const auto offsets = cfa_offsets(phase);
  Plane out(2 * hw, 2 * hh);
  for (std::size_t k = 0; k < 4; ++k) {
    const Plane& p = packed.planes[k];
    for (std::size_t y = 0; y < hh; ++y)
      for (std::size_t x = 0; x < hw; ++x) out.at(2 * y + offsets[k].dy, 2 * x + offsets[k].dx) = p.at(y, x);
  }
  return out;
}

PackedRaw amplify(const PackedRaw& packed, double ratio) {
  if (!(ratio >= 1.0) || !std::isfinite(ratio)) {
    throw ArgumentError("amplification ratio must be >= 1, got " + std::to_string(ratio));
  }
  PackedRaw out = packed;
  for (auto& p : out.planes)
    for (auto& v : p.data) v = std::clamp(v * ratio, 0.0, 1.0);
  out.ratio_applied = packed.ratio_applied * ratio;
  return out;
}

double compute_ratio(double input_exposure, double gt_exposure) {
  if (!(input_exposure > 0.0) || !(gt_exposure > 0.0)) {
    throw ArgumentError("exposure times must be positive");
  }
  return std::clamp(gt_exposure / input_exposure, 1.0, kMaxRatio);
}

}  // namespace darkforge
