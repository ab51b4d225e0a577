#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "darkforge/errors.hpp"
#include "darkforge/metrics.hpp"
#include "test_util.hpp"

using namespace darkforge;
using namespace darkforge::metrics;

namespace {

// Oracle: full 2-D DFT, then the energy share of the Nyquist neighbourhoods.
double dft_checkerboard(const Plane& p) {
  const std::size_t w = p.width, h = p.height;
  const double pi2 = 2 * std::numbers::pi;
  std::vector<double> power(w * h);
  double total = 0;
  for (std::size_t ky = 0; ky < h; ++ky)
    for (std::size_t kx = 0; kx < w; ++kx) {
      std::complex<double> acc = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          acc += p.at(y, x) * std::polar(1.0, -pi2 * (double(ky * y) / double(h) + double(kx * x) / double(w)));
      power[ky * w + kx] = std::norm(acc);
      if (ky || kx) total += power[ky * w + kx];
    }
  if (total < 1e-20) return 0;
  std::set<std::size_t> sel;
  for (auto [cy, cx] : {std::pair{h / 2, w / 2}, std::pair{h / 2, std::size_t{0}}, std::pair{std::size_t{0}, w / 2}})
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t y = (cy + h + dy) % h, x = (cx + w + dx) % w;
        if (y || x) sel.insert(y * w + x);
      }
  double s = 0;
  for (std::size_t i : sel) s += power[i];
  return s / total;
}

// Oracle: SSIM by direct windowed sums at every valid position.
double direct_ssim(const Plane& a, const Plane& b) {
  double g[11], gs = 0;
  for (int i = 0; i < 11; ++i) gs += g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5));
  const double c1 = 0.0001, c2 = 0.0009;
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 11 <= a.height; ++y)
    for (std::size_t x = 0; x + 11 <= a.width; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double wt = g[i] * g[j] / (gs * gs);
          const double va = a.at(y + i, x + j), vb = b.at(y + i, x + j);
          ma += wt * va, mb += wt * vb, saa += wt * va * va, sbb += wt * vb * vb, sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return sum / double(n);
}

}  // namespace

TEST(Psnr, IdenticalIsCapped) {
  std::mt19937_64 rng(1);
  const Plane a = test::random_plane(9, 7, rng);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  const RgbImage c = test::random_rgb(5, 5, rng);
  EXPECT_EQ(psnr(c, c), 100.0);
}

TEST(Psnr, ConstantEightBitOffset) {
  Plane a(16, 16), b(16, 16);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = static_cast<double>(i % 200) / 255.0;
    b.data[i] = static_cast<double>(i % 200 + 16) / 255.0;
  }
  const double oracle = 20.0 * std::log10(255.0 / 16.0);
  EXPECT_NEAR(psnr(a, b), oracle, 1e-9);
  EXPECT_NEAR(psnr(a, b), 24.0484, 1e-4);
}

TEST(Psnr, UniformNoiseMonteCarlo) {
  std::mt19937_64 rng(2);
  const Plane a = test::random_plane(256, 256, rng, 0.3, 0.7);
  double prev = 1e9;
  for (double d : {0.002, 0.005, 0.01, 0.02, 0.05}) {
    std::uniform_real_distribution<double> u(-d, d);
    Plane b = a;
    for (double& v : b.data) v += u(rng);
    const double got = psnr(a, b);
    EXPECT_NEAR(got, -10 * std::log10(d * d / 3), 0.1) << d;
    EXPECT_LT(got, prev);
    prev = got;
  }
}

TEST(Psnr, SymmetricAndShapeChecked) {
  std::mt19937_64 rng(3);
  const Plane a = test::random_plane(12, 12, rng), b = test::random_plane(12, 12, rng);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, Plane(12, 11)), DimensionError);
}

TEST(Ssim, MatchesDirectOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const Plane a = test::random_plane(20, 16, rng);
    Plane b = a;
    std::normal_distribution<double> n(0, 0.1 * (trial + 1));
    for (double& v : b.data) v += n(rng);
    EXPECT_NEAR(ssim(a, b), direct_ssim(a, b), 1e-10);
  }
}

TEST(Ssim, IdenticalIsOneExactly) {
  std::mt19937_64 rng(5);
  const Plane a = test::random_plane(32, 24, rng);
  EXPECT_EQ(ssim(a, a), 1.0);
  const RgbImage c = test::random_rgb(16, 16, rng);
  EXPECT_EQ(ssim(c, c), 1.0);
}

TEST(Ssim, InvertedBinaryIsNegative) {
  std::mt19937_64 rng(6);
  Plane a(32, 32), inv(32, 32);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = coin(rng) ? 1.0 : 0.0;
    inv.data[i] = 1.0 - a.data[i];
  }
  EXPECT_LT(ssim(a, inv), 0.0);
  EXPECT_NEAR(ssim(a, inv), direct_ssim(a, inv), 1e-10);
}

TEST(Ssim, TinyNoiseStaysNearOne) {
  std::mt19937_64 rng(7);
  const Plane a = test::random_plane(48, 48, rng);
  Plane b = a;
  std::normal_distribution<double> n(0, 1e-4);
  for (double& v : b.data) v += n(rng);
  EXPECT_GE(ssim(a, b), 0.999);
}

TEST(Ssim, SymmetricAndBounded) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    const Plane a = test::random_plane(16, 16, rng), b = test::random_plane(16, 16, rng);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-15);
    EXPECT_LE(std::abs(ssim(a, b)), 1.0);
  }
  EXPECT_THROW(ssim(Plane(10, 20), Plane(10, 20)), DimensionError);
}

TEST(Ssim, RgbIsChannelMean) {
  std::mt19937_64 rng(9);
  const RgbImage a = test::random_rgb(16, 16, rng), b = test::random_rgb(16, 16, rng);
  double mean = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    Plane pa(16, 16), pb(16, 16);
    std::copy(a.channel(c).begin(), a.channel(c).end(), pa.data.begin());
    std::copy(b.channel(c).begin(), b.channel(c).end(), pb.data.begin());
    mean += direct_ssim(pa, pb) / 3;
  }
  EXPECT_NEAR(ssim(a, b), mean, 1e-10);
}

TEST(Checkerboard, MatchesDftOracle) {
  std::mt19937_64 rng(10);
  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 12}, {10, 14}}) {
    const Plane p = test::random_plane(w, h, rng);
    EXPECT_NEAR(checkerboard_score(p), dft_checkerboard(p), 1e-10);
  }
}

TEST(Checkerboard, PerfectPatternScoresHigh) {
  Plane p(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) p.at(y, x) = (x + y) % 2;
  EXPECT_GT(checkerboard_score(p), 0.9);
  EXPECT_NEAR(checkerboard_score(p), dft_checkerboard(p), 1e-10);
}

TEST(Checkerboard, ConstantIsZero) { EXPECT_EQ(checkerboard_score(Plane(16, 16, 0.4)), 0.0); }

TEST(Checkerboard, SmoothRampIsLow) {
  Plane p(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) p.at(y, x) = (x + y) / 62.0;
  EXPECT_LT(checkerboard_score(p), 0.05);
  EXPECT_LT(dft_checkerboard(p), 0.05);
}

TEST(Checkerboard, InvariantToBrightnessOffset) {
  std::mt19937_64 rng(11);
  const Plane p = test::random_plane(16, 16, rng);
  Plane q = p;
  for (double& v : q.data) v += 0.25;
  EXPECT_NEAR(checkerboard_score(p), checkerboard_score(q), 1e-12);
}

TEST(Checkerboard, DimsChecked) {
  EXPECT_THROW(checkerboard_score(Plane(6, 8)), DimensionError);
  EXPECT_THROW(checkerboard_score(Plane(9, 8)), DimensionError);
}

TEST(Luminance, Bt601Weights) {
  RgbImage img(1, 1);
  img.data = {1, 0, 0};
  EXPECT_DOUBLE_EQ(luminance(img).data[0], 0.299);
  img.data = {0.2, 0.4, 0.6};
  EXPECT_DOUBLE_EQ(luminance(img).data[0], 0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6);
}

TEST(Quantize8, RoundsAndClamps) {
  Plane p(4, 1);
  p.data = {-0.1, 0.5, 1.2, 100.4 / 255};
  const Plane q = quantize8(p);
  EXPECT_EQ(q.data[0], 0.0);
  EXPECT_EQ(q.data[1], 128.0 / 255);
  EXPECT_EQ(q.data[2], 1.0);
  EXPECT_EQ(q.data[3], 100.0 / 255);
}

TEST(Evaluate, BundlesAllThree) {
  std::mt19937_64 rng(12);
  const RgbImage a = test::random_rgb(16, 16, rng), b = test::random_rgb(16, 16, rng);
  const MetricReport r = evaluate(a, b);
  EXPECT_EQ(r.psnr_db, psnr(a, b));
  EXPECT_EQ(r.ssim, ssim(a, b));
  EXPECT_EQ(r.checkerboard, checkerboard_score(a));
}
