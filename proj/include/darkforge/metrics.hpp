#pragma once

// Reference-quality image metrics on [0, 1] float images.

#include <span>

#include "darkforge/image.hpp"

namespace darkforge::metrics {

inline constexpr double kPsnrCap = 100.0;

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double checkerboard = 0.0;  ///< of the first (evaluated) image
};

/// 10 log10(1 / MSE) with peak 1.0; identical inputs give kPsnrCap.
double psnr(std::span<const double> a, std::span<const double> b);
double psnr(const Plane& a, const Plane& b);
double psnr(const RgbImage& a, const RgbImage& b);

/// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1. RGB is averaged over channels.
double ssim(const Plane& a, const Plane& b);
double ssim(const RgbImage& a, const RgbImage& b);

/// Fraction of non-DC spectral energy of the luminance plane that sits in the
/// 3x3-bin neighbourhoods of (Nyquist, Nyquist), (Nyquist, 0) and (0, Nyquist).
/// A constant image scores 0. Needs even dims >= 8.
double checkerboard_score(const Plane& img);
double checkerboard_score(const RgbImage& img);

/// BT.601 luminance.
Plane luminance(const RgbImage& img);

MetricReport evaluate(const Plane& output, const Plane& reference);
MetricReport evaluate(const RgbImage& output, const RgbImage& reference);

/// round(v * 255) / 255 after clamping to [0, 1].
Plane quantize8(const Plane& p);
RgbImage quantize8(const RgbImage& img);

}  // namespace darkforge::metrics
