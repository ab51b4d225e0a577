#pragma once

// Cross-camera registration: Harris corners, NCC patch matching, RANSAC
// homography and mosaic-aware warping.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "darkforge/image.hpp"
#include "darkforge/raw_core.hpp"

namespace darkforge {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Correspondence {
  Point2 p;            ///< source image pixel
  Point2 q;            ///< target image pixel
  double score = 0.0;  ///< NCC of the descriptors, clipped to [0, 1]
};

/// Projective map, q ~ h * p. Normalised so h(2,2) = 1 when that entry is not
/// vanishing, otherwise to unit Frobenius norm.
struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();

  static Homography from_matrix(const Eigen::Matrix3d& m);
  Point2 apply(const Point2& p) const;
  /// Throws ArgumentError when singular.
  Homography inverse() const;
};

struct MatchOptions {
  std::size_t max_corners = 600;
  double harris_k = 0.04;
  /// Corners weaker than this fraction of the strongest response are dropped.
  double quality = 0.01;
  std::size_t nms_radius = 3;
  double ratio = 0.8;
  double min_ncc = 0.5;
};

inline constexpr std::size_t kPatchSize = 15;

/// Integer-position Harris corners, strongest first, at least half a patch
/// away from the border.
std::vector<Point2> harris_corners(const Plane& img, const MatchOptions& opts = {});

/// Throws DimensionError for mismatched or too small images and
/// InsufficientFeaturesError when either image has fewer than 8 corners.
std::vector<Correspondence> detect_and_match(const Plane& src, const Plane& dst, const MatchOptions& opts = {});

struct RansacOptions {
  std::size_t iters = 2000;
  double inlier_px = 2.0;
  std::size_t min_inliers = 8;
  std::uint64_t seed = 0;
};

struct HomographyFit {
  Homography h;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  double mean_error = 0.0;  ///< mean reprojection error over the inliers
};

/// Hartley-normalised DLT on all given pairs (at least 4).
Homography fit_homography(const std::vector<Correspondence>& matches);

/// RANSAC over 4-point samples with a final refit on the consensus set.
/// Throws ArgumentError below 4 matches, AlignmentError below min_inliers.
HomographyFit estimate_homography(const std::vector<Correspondence>& matches, const RansacOptions& opts = {});

/// Inverse-mapped bilinear warp into a frame of the same size; samples that
/// fall outside the source are 0.
Plane warp(const Plane& img, const Homography& h);

/// Warps each packed plane with the homography conjugated into its own grid,
/// so CFA sites never mix.
Plane warp_mosaic(const Plane& mosaic, const Homography& h, CfaPhase phase);

/// Warps a quantised frame (mosaic-aware unless Mono) and rounds back to codes.
BayerRaw warp_raw(const BayerRaw& frame, const Homography& h);

/// Luminance proxy for feature detection: a [1 2 1]^2 / 16 blur, which weighs
/// R, G and B equally at every site of any Bayer phase.
Plane detection_plane(const BayerRaw& frame);

struct AlignReport {
  Homography h;
  std::size_t matches = 0;
  std::size_t inliers = 0;
  double inlier_ratio = 0.0;
  double mean_reproj_error = 0.0;
};

struct BracketAlignment {
  std::vector<BayerRaw> frames;
  AlignReport report;
};

/// Estimates H from the reference pair (source camera to target camera) and
/// applies it to every frame of the source camera's bracket.
BracketAlignment align_bracket(const BayerRaw& ref_src, const BayerRaw& ref_dst, const std::vector<BayerRaw>& bracket,
                               const RansacOptions& ransac = {}, const MatchOptions& match = {});

}  // namespace darkforge
