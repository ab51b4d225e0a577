#pragma once

// Sensor frames and the preprocessing that turns them into network input:
// black/white normalisation, CFA packing and exposure-ratio amplification.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "darkforge/image.hpp"

namespace darkforge {

enum class CfaPhase { RGGB, GRBG, GBRG, BGGR, Mono };

std::string to_string(CfaPhase phase);
CfaPhase parse_cfa_phase(std::string_view text);

/// Canonical packed plane order.
enum PackedChannel : std::size_t { kR = 0, kG1 = 1, kG2 = 2, kB = 3 };

struct TileOffset {
  std::size_t dy, dx;
};

/// Position inside the 2x2 tile of each canonical plane. G1 is the green on
/// the tile's top row, G2 the one on the bottom row.
std::array<TileOffset, 4> cfa_offsets(CfaPhase phase);

/// Quantised sensor frame. `cfa_phase == Mono` marks a filterless frame.
struct BayerRaw {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> data;
  unsigned bit_depth = 8;
  std::uint32_t black_level = 0;
  std::uint32_t white_level = 255;
  CfaPhase cfa_phase = CfaPhase::RGGB;
  double exposure_time = 1.0;

  /// Throws DimensionError / ArgumentError when an invariant is broken.
  void validate() const;
  bool operator==(const BayerRaw&) const = default;
};

/// Four half-resolution planes [R, G1, G2, B].
struct PackedRaw {
  std::array<Plane, 4> planes;
  double ratio_applied = 1.0;

  std::size_t width() const { return planes[0].width; }
  std::size_t height() const { return planes[0].height; }
};

/// Full-resolution monochrome frame in [0, 1].
struct MonoRaw : Plane {
  MonoRaw() = default;
  explicit MonoRaw(Plane p) : Plane(std::move(p)) {}
};

/// (sample - black) / (white - black), clamped to [0, 1].
Plane normalize(const BayerRaw& raw);

PackedRaw pack_raw(const Plane& plane, CfaPhase phase);
Plane unpack_raw(const PackedRaw& packed, CfaPhase phase);

/// clamp(value * ratio, 0, 1); ratio must be >= 1.
PackedRaw amplify(const PackedRaw& packed, double ratio);

inline constexpr double kMaxRatio = 300.0;

/// gt_exposure / input_exposure clamped to [1, 300].
double compute_ratio(double input_exposure, double gt_exposure);

}  // namespace darkforge
