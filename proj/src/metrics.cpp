#include "darkforge/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "darkforge/errors.hpp"

namespace darkforge::metrics {

double psnr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("psnr: images differ in size");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrCap;
  const double mse = sse / static_cast<double>(a.size());
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("psnr: images differ in size");
  return psnr(std::span<const double>(a.data), std::span<const double>(b.data));
}

double psnr(const RgbImage& a, const RgbImage& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("psnr: images differ in size");
  return psnr(std::span<const double>(a.data), std::span<const double>(b.data));
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

// Separable 'valid' Gaussian filter.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t w, std::size_t h) {
  static const auto taps = gaussian_taps();
  const std::size_t ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> tmp(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += taps[k] * src[y * w + x + k];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += taps[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t w, std::size_t h) {
  if (w < kWindow || h < kWindow) throw DimensionError("ssim: image smaller than the 11x11 window");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const std::size_t n = w * h;
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end()), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, w, h);
  const auto my = filter_valid(y, w, h);
  const auto sxx = filter_valid(xx, w, h);
  const auto syy = filter_valid(yy, w, h);
  const auto sxy = filter_valid(xy, w, h);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace

double ssim(const Plane& a, const Plane& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("ssim: images differ in size");
  return ssim_plane(a.data, b.data, a.width, a.height);
}

double ssim(const RgbImage& a, const RgbImage& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("ssim: images differ in size");
  double s = 0.0;
  for (std::size_t c = 0; c < 3; ++c) s += ssim_plane(a.channel(c), b.channel(c), a.width, a.height);
  return s / 3.0;
}

double checkerboard_score(const Plane& img) {
  const std::size_t w = img.width, h = img.height;
  if (w < 8 || h < 8 || w % 2 != 0 || h % 2 != 0) {
    throw DimensionError("checkerboard_score needs even dims >= 8");
  }
  const std::size_t n = w * h;
  double mean = 0.0;
  for (double v : img.data) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> centred(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    centred[i] = img.data[i] - mean;
    energy += centred[i] * centred[i];
  }
  // Parseval: sum over all bins of |F|^2 = n * sum |x|^2; DC is zero after centring.
  const double total = static_cast<double>(n) * energy;
  if (total <= 1e-24 * static_cast<double>(n)) return 0.0;

  std::set<std::pair<std::size_t, std::size_t>> bins;
  const std::array<std::pair<std::size_t, std::size_t>, 3> centres = {
      std::pair{h / 2, w / 2}, std::pair{h / 2, std::size_t{0}}, std::pair{std::size_t{0}, w / 2}};
  for (const auto& [cy, cx] : centres)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t ky = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cy + h) + dy) % h;
        const std::size_t kx = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cx + w) + dx) % w;
        if (ky != 0 || kx != 0) bins.emplace(ky, kx);
      }

  // Separable evaluation of the selected DFT bins.
  const double two_pi = 2.0 * std::numbers::pi;
  double selected = 0.0;
  std::set<std::size_t> kx_needed;
  for (const auto& b : bins) kx_needed.insert(b.second);
  // Row transforms: for each needed kx, G[y] = sum_x c[y,x] e^{-i 2pi kx x / w}.
  std::vector<std::pair<std::size_t, std::vector<std::pair<double, double>>>> per_kx;
  for (std::size_t kx : kx_needed) {
    std::vector<std::pair<double, double>> g(h);
    for (std::size_t y = 0; y < h; ++y) {
      double re = 0.0, im = 0.0;
      for (std::size_t x = 0; x < w; ++x) {
        const double ang = two_pi * static_cast<double>((kx * x) % w) / static_cast<double>(w);
        re += centred[y * w + x] * std::cos(ang);
        im -= centred[y * w + x] * std::sin(ang);
      }
      g[y] = {re, im};
    }
    per_kx.emplace_back(kx, std::move(g));
  }
  for (const auto& [ky, kx] : bins) {
    const auto& g = std::find_if(per_kx.begin(), per_kx.end(), [kx = kx](const auto& e) { return e.first == kx; })->second;
    double re = 0.0, im = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      const double ang = two_pi * static_cast<double>((ky * y) % h) / static_cast<double>(h);
      const double c = std::cos(ang), s = -std::sin(ang);
      re += g[y].first * c - g[y].second * s;
      im += g[y].first * s + g[y].second * c;
    }
    selected += re * re + im * im;
  }
  return std::clamp(selected / total, 0.0, 1.0);
}

Plane luminance(const RgbImage& img) {
  Plane out(img.width, img.height);
  const auto r = img.channel(0), g = img.channel(1), b = img.channel(2);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return out;
}

double checkerboard_score(const RgbImage& img) { return checkerboard_score(luminance(img)); }

MetricReport evaluate(const Plane& output, const Plane& reference) {
  return {psnr(output, reference), ssim(output, reference), checkerboard_score(output)};
}

MetricReport evaluate(const RgbImage& output, const RgbImage& reference) {
  return {psnr(output, reference), ssim(output, reference), checkerboard_score(output)};
}

Plane quantize8(const Plane& p) {
  Plane out = p;
  for (auto& v : out.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

RgbImage quantize8(const RgbImage& img) {
  RgbImage out = img;
  for (auto& v : out.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

}  // namespace darkforge::metrics
