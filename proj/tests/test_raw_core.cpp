#include <gtest/gtest.h>

#include "darkforge/errors.hpp"
#include "darkforge/raw_core.hpp"
#include "test_util.hpp"

using namespace darkforge;

namespace {

const CfaPhase kPhases[] = {CfaPhase::RGGB, CfaPhase::GRBG, CfaPhase::GBRG, CfaPhase::BGGR};

// Oracle: read plane membership straight off the phase name, e.g. "GRBG" is
// the tile [[G, R], [B, G]].
Plane oracle_plane(const Plane& mosaic, CfaPhase phase, char colour, int green_row) {
  const std::string name = to_string(phase);
  Plane out(mosaic.width / 2, mosaic.height / 2);
  for (std::size_t ty = 0; ty < 2; ++ty)
    for (std::size_t tx = 0; tx < 2; ++tx) {
      if (name[ty * 2 + tx] != colour) continue;
      if (colour == 'G' && static_cast<int>(ty) != green_row) continue;
      for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = mosaic.at(2 * y + ty, 2 * x + tx);
    }
  return out;
}

Plane ramp(std::size_t w, std::size_t h) {
  Plane p(w, h);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<double>(i);
  return p;
}

}  // namespace

TEST(Normalize, BlackMapsToZeroWhiteToOne) {
  BayerRaw b;
  b.width = 2;
  b.height = 2;
  b.black_level = 16;
  b.white_level = 240;
  b.data = {16, 240, 8, 128};
  const Plane p = normalize(b);
  EXPECT_EQ(p.data[0], 0.0);
  EXPECT_EQ(p.data[1], 1.0);
  EXPECT_EQ(p.data[2], 0.0);  // below black clamps
  EXPECT_DOUBLE_EQ(p.data[3], 112.0 / 224.0);
}

TEST(Normalize, EightBitSample51IsPointTwo) {
  BayerRaw b;
  b.width = 2;
  b.height = 2;
  b.data = {51, 0, 0, 0};
  EXPECT_DOUBLE_EQ(normalize(b).data[0], 0.2);
}

TEST(Normalize, MonotoneInSample) {
  BayerRaw b;
  b.width = 256;
  b.height = 2;
  b.black_level = 10;
  b.white_level = 200;
  b.data.resize(512);
  for (std::size_t i = 0; i < 256; ++i) b.data[i] = b.data[256 + i] = static_cast<std::uint16_t>(std::min<std::size_t>(i, 200));
  const Plane p = normalize(b);
  for (std::size_t i = 1; i < 256; ++i) EXPECT_LE(p.data[i - 1], p.data[i]);
}

TEST(BayerRawValidate, RejectsBrokenInvariants) {
  BayerRaw ok;
  ok.width = 2;
  ok.height = 2;
  ok.data = {0, 1, 2, 3};
  EXPECT_NO_THROW(ok.validate());

  BayerRaw odd = ok;
  odd.width = 3;
  odd.data.resize(6);
  EXPECT_THROW(odd.validate(), DimensionError);

  BayerRaw short_data = ok;
  short_data.data.pop_back();
  EXPECT_THROW(short_data.validate(), DimensionError);

  BayerRaw hot = ok;
  hot.data[0] = 256;
  EXPECT_THROW(hot.validate(), ArgumentError);

  BayerRaw levels = ok;
  levels.black_level = 255;
  EXPECT_THROW(levels.validate(), ArgumentError);

  BayerRaw exposure = ok;
  exposure.exposure_time = 0.0;
  EXPECT_THROW(exposure.validate(), ArgumentError);

  BayerRaw depth = ok;
  depth.bit_depth = 12;
  EXPECT_THROW(depth.validate(), ArgumentError);
}

TEST(PackRaw, RggbTwoByTwo) {
  Plane p(2, 2);
  p.data = {1, 2, 3, 4};
  const PackedRaw k = pack_raw(p, CfaPhase::RGGB);
  EXPECT_EQ(k.planes[kR].data, std::vector<double>{1});
  EXPECT_EQ(k.planes[kG1].data, std::vector<double>{2});
  EXPECT_EQ(k.planes[kG2].data, std::vector<double>{3});
  EXPECT_EQ(k.planes[kB].data, std::vector<double>{4});
}

TEST(PackRaw, BggrTwoByTwo) {
  Plane p(2, 2);
  p.data = {1, 2, 3, 4};
  const PackedRaw k = pack_raw(p, CfaPhase::BGGR);
  EXPECT_EQ(k.planes[kR].data, std::vector<double>{4});
  EXPECT_EQ(k.planes[kG1].data, std::vector<double>{2});
  EXPECT_EQ(k.planes[kG2].data, std::vector<double>{3});
  EXPECT_EQ(k.planes[kB].data, std::vector<double>{1});
}

TEST(PackRaw, RggbRampFourByFour) {
  const PackedRaw k = pack_raw(ramp(4, 4), CfaPhase::RGGB);
  EXPECT_EQ(k.planes[kR].data, (std::vector<double>{0, 2, 8, 10}));
  EXPECT_EQ(k.planes[kG1].data, (std::vector<double>{1, 3, 9, 11}));
  EXPECT_EQ(k.planes[kG2].data, (std::vector<double>{4, 6, 12, 14}));
  EXPECT_EQ(k.planes[kB].data, (std::vector<double>{5, 7, 13, 15}));
}

TEST(PackRaw, MatchesNameOracleForEveryPhase) {
  std::mt19937_64 rng(11);
  const Plane m = test::random_plane(10, 6, rng);
  for (CfaPhase phase : kPhases) {
    const PackedRaw k = pack_raw(m, phase);
    EXPECT_EQ(k.planes[kR], oracle_plane(m, phase, 'R', -1)) << to_string(phase);
    EXPECT_EQ(k.planes[kG1], oracle_plane(m, phase, 'G', 0)) << to_string(phase);
    EXPECT_EQ(k.planes[kG2], oracle_plane(m, phase, 'G', 1)) << to_string(phase);
    EXPECT_EQ(k.planes[kB], oracle_plane(m, phase, 'B', -1)) << to_string(phase);
  }
}

TEST(PackRaw, OddDimsRejected) {
  EXPECT_THROW(pack_raw(Plane(3, 2), CfaPhase::RGGB), DimensionError);
  EXPECT_THROW(pack_raw(Plane(2, 5), CfaPhase::RGGB), DimensionError);
  EXPECT_THROW(pack_raw(Plane(2, 2), CfaPhase::Mono), std::invalid_argument);
}

TEST(UnpackRaw, RampFromPlanes) {
  PackedRaw k;
  k.planes[kR] = Plane(2, 2);
  k.planes[kR].data = {0, 2, 8, 10};
  k.planes[kG1] = Plane(2, 2);
  k.planes[kG1].data = {1, 3, 9, 11};
  k.planes[kG2] = Plane(2, 2);
  k.planes[kG2].data = {4, 6, 12, 14};
  k.planes[kB] = Plane(2, 2);
  k.planes[kB].data = {5, 7, 13, 15};
  EXPECT_EQ(unpack_raw(k, CfaPhase::RGGB), ramp(4, 4));
}

TEST(UnpackRaw, ZeroPlanesGiveZeroMosaic) {
  PackedRaw k;
  for (auto& p : k.planes) p = Plane(3, 2);
  EXPECT_EQ(unpack_raw(k, CfaPhase::GBRG), Plane(6, 4));
}

TEST(UnpackRaw, MismatchedPlanesRejected) {
  PackedRaw k;
  for (auto& p : k.planes) p = Plane(3, 2);
  k.planes[kB] = Plane(2, 2);
  EXPECT_THROW(unpack_raw(k, CfaPhase::RGGB), DimensionError);
}

TEST(PackUnpack, RoundTripAllPhasesRandom) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> half(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    const Plane m = test::random_plane(2 * half(rng), 2 * half(rng), rng);
    for (CfaPhase phase : kPhases) {
      const PackedRaw k = pack_raw(m, phase);
      ASSERT_EQ(unpack_raw(k, phase), m);
      const PackedRaw again = pack_raw(unpack_raw(k, phase), phase);
      for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(again.planes[c], k.planes[c]);
    }
  }
}

TEST(Amplify, ScalesAndClamps) {
  PackedRaw k;
  for (auto& p : k.planes) p = Plane(1, 2);
  k.planes[0].data = {0.1, 0.5};
  const PackedRaw a = amplify(k, 4.0);
  EXPECT_DOUBLE_EQ(a.planes[0].data[0], 0.4);
  EXPECT_EQ(a.planes[0].data[1], 1.0);
  EXPECT_EQ(a.ratio_applied, 4.0);
}

TEST(Amplify, RatioOneIsIdentityOnClampedInput) {
  std::mt19937_64 rng(3);
  PackedRaw k;
  for (auto& p : k.planes) p = test::random_plane(5, 4, rng);
  const PackedRaw a = amplify(k, 1.0);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.planes[c], k.planes[c]);
}

TEST(Amplify, RatioBelowOneRejected) {
  PackedRaw k;
  for (auto& p : k.planes) p = Plane(1, 1);
  EXPECT_THROW(amplify(k, 0.5), ArgumentError);
}

TEST(Amplify, MonotoneInRatio) {
  std::mt19937_64 rng(8);
  PackedRaw k;
  for (auto& p : k.planes) p = test::random_plane(4, 4, rng, 0.0, 0.2);
  PackedRaw prev = amplify(k, 1.0);
  for (double r : {1.5, 2.0, 4.0, 8.0, 16.0}) {
    const PackedRaw cur = amplify(k, r);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < cur.planes[c].data.size(); ++i) EXPECT_GE(cur.planes[c].data[i], prev.planes[c].data[i]);
    prev = cur;
  }
}

TEST(ComputeRatio, ExposureQuotient) {
  EXPECT_DOUBLE_EQ(compute_ratio(1.0 / 256, 0.375), 96.0);
  EXPECT_EQ(compute_ratio(0.1, 0.1), 1.0);
  EXPECT_EQ(compute_ratio(1.0 / 4096, 0.375), 300.0);
  EXPECT_EQ(compute_ratio(1.0, 0.5), 1.0);
  EXPECT_THROW(compute_ratio(0.0, 1.0), ArgumentError);
  EXPECT_THROW(compute_ratio(1.0, -1.0), ArgumentError);
}

TEST(ComputeRatio, AlwaysWithinBounds) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> logu(-12.0, 4.0);
  for (int i = 0; i < 1000; ++i) {
    const double r = compute_ratio(std::exp(logu(rng)), std::exp(logu(rng)));
    EXPECT_GE(r, 1.0);
    EXPECT_LE(r, kMaxRatio);
  }
}

TEST(CfaPhaseNames, RoundTrip) {
  for (CfaPhase p : {CfaPhase::RGGB, CfaPhase::GRBG, CfaPhase::GBRG, CfaPhase::BGGR, CfaPhase::Mono})
    EXPECT_EQ(parse_cfa_phase(to_string(p)), p);
  EXPECT_EQ(to_string(CfaPhase::Mono), "MONO");
  EXPECT_THROW(parse_cfa_phase("RGBG"), std::invalid_argument);
}
