#pragma once

#include <filesystem>

#include "darkforge/image.hpp"

namespace darkforge {

/// Decoded PNG, planar, values scaled to [0, 1].
struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  ///< 1 (gray) or 3 (RGB); alpha is dropped
  unsigned bit_depth = 8;
  std::vector<double> data;
};

/// Values are clamped to [0, 1] and rounded to the given depth (8 or 16).
void write_png(const std::filesystem::path& path, const RgbImage& img, unsigned bit_depth = 8);
void write_png(const std::filesystem::path& path, const Plane& img, unsigned bit_depth = 8);

PngImage read_png(const std::filesystem::path& path);
/// Gray inputs are replicated to three channels.
RgbImage png_to_rgb(const PngImage& png);
/// RGB inputs are reduced to BT.601 luminance.
Plane png_to_plane(const PngImage& png);

}  // namespace darkforge
