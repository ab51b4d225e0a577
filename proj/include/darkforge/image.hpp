#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace darkforge {

/// Single-channel float image, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(w * h, fill) {}

  double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  bool operator==(const Plane&) const = default;
};

/// Planar RGB image with values nominally in [0, 1].
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;  // [R plane | G plane | B plane]

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), data(3 * w * h, fill) {}

  std::span<double> channel(std::size_t c) { return {data.data() + c * width * height, width * height}; }
  std::span<const double> channel(std::size_t c) const {
    return {data.data() + c * width * height, width * height};
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  bool operator==(const RgbImage&) const = default;
};

}  // namespace darkforge
