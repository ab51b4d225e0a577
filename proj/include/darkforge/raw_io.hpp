#pragma once

// Headerless .raw frames with a JSON sidecar named <stem>.meta.json.
// Samples are row-major, little-endian, 1 byte (8-bit) or 2 bytes (16-bit).

#include <filesystem>

#include "darkforge/raw_core.hpp"

namespace darkforge {

/// Default sensor geometry of the reference camera pair.
inline constexpr std::size_t kDefaultWidth = 1280;
inline constexpr std::size_t kDefaultHeight = 1024;

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

/// Writes `<path>` and its sidecar. Validates the frame first.
void write_raw(const std::filesystem::path& path, const BayerRaw& frame);

/// Reads a frame and its sidecar. Missing black/white levels default to
/// 0 / 2^bit_depth - 1. Any inconsistency raises LoadError naming the file.
BayerRaw read_raw(const std::filesystem::path& path);

}  // namespace darkforge
