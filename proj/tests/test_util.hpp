#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "darkforge/image.hpp"
#include "darkforge/raw_core.hpp"
#include "darkforge/tensor.hpp"

namespace darkforge::test {

inline Plane random_plane(std::size_t w, std::size_t h, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Plane p(w, h);
  for (double& v : p.data) v = u(rng);
  return p;
}

inline RgbImage random_rgb(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage img(w, h);
  for (double& v : img.data) v = u(rng);
  return img;
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  Tensor t = Tensor::from_data(shape, std::move(v));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

inline BayerRaw random_bayer(std::size_t w, std::size_t h, std::mt19937_64& rng, unsigned bit_depth = 8,
                             CfaPhase phase = CfaPhase::RGGB) {
  BayerRaw b;
  b.width = w;
  b.height = h;
  b.bit_depth = bit_depth;
  b.black_level = 0;
  b.white_level = (1u << bit_depth) - 1u;
  b.cfa_phase = phase;
  b.exposure_time = 1.0 / 64;
  std::uniform_int_distribution<unsigned> u(0, b.white_level);
  b.data.resize(w * h);
  for (auto& v : b.data) v = static_cast<std::uint16_t>(u(rng));
  return b;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("darkforge_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace darkforge::test
