#include "darkforge/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "darkforge/errors.hpp"

namespace darkforge {

Homography Homography::from_matrix(const Eigen::Matrix3d& m) {
  Homography out;
  const double corner = m(2, 2);
  if (std::abs(corner) > 1e-12 * m.norm()) {
    out.h = m / corner;
  } else {
    out.h = m / m.norm();
  }
  return out;
}

Point2 Homography::apply(const Point2& p) const {
  const Eigen::Vector3d v = h * Eigen::Vector3d(p.x, p.y, 1.0);
  if (v.z() == 0.0) {
    const double inf = std::numeric_limits<double>::infinity();
    return {inf, inf};
  }
  return {v.x() / v.z(), v.y() / v.z()};
}

Homography Homography::inverse() const {
  const double scale = h.norm();
  if (!(std::abs(h.determinant()) > 1e-12 * scale * scale * scale)) throw ArgumentError("homography is singular");
  return from_matrix(h.inverse());
}

// Corners and descriptors ----------------------------------------------------

namespace {

constexpr std::size_t kHalfPatch = kPatchSize / 2;
constexpr std::size_t kMinCorners = 8;

Plane gaussian_blur(const Plane& in, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  const long w = static_cast<long>(in.width), h = static_cast<long>(in.height);
  Plane tmp(in.width, in.height), out(in.width, in.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * in.at(y, std::clamp(x + i, 0L, w - 1));
      tmp.at(y, x) = acc;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(std::clamp(y + i, 0L, h - 1), x);
      out.at(y, x) = acc;
    }
  return out;
}

Plane harris_response(const Plane& img, double k) {
  const std::size_t w = img.width, h = img.height;
  Plane ixx(w, h), iyy(w, h), ixy(w, h);
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double gx = (img.at(y - 1, x + 1) + 2 * img.at(y, x + 1) + img.at(y + 1, x + 1) - img.at(y - 1, x - 1) -
                         2 * img.at(y, x - 1) - img.at(y + 1, x - 1)) /
                        8.0;
      const double gy = (img.at(y + 1, x - 1) + 2 * img.at(y + 1, x) + img.at(y + 1, x + 1) - img.at(y - 1, x - 1) -
                         2 * img.at(y - 1, x) - img.at(y - 1, x + 1)) /
                        8.0;
      ixx.at(y, x) = gx * gx;
      iyy.at(y, x) = gy * gy;
      ixy.at(y, x) = gx * gy;
    }
  const Plane sxx = gaussian_blur(ixx, 1.5), syy = gaussian_blur(iyy, 1.5), sxy = gaussian_blur(ixy, 1.5);
  Plane r(w, h);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    const double det = sxx.data[i] * syy.data[i] - sxy.data[i] * sxy.data[i];
    const double tr = sxx.data[i] + syy.data[i];
    r.data[i] = det - k * tr * tr;
  }
  return r;
}

struct Descriptors {
  std::vector<Point2> points;
  Eigen::MatrixXd rows;  // one unit-norm, zero-mean patch per row
};

Descriptors describe(const Plane& img, const std::vector<Point2>& corners) {
  Descriptors d;
  std::vector<Eigen::VectorXd> kept;
  for (const Point2& c : corners) {
    const std::size_t cx = static_cast<std::size_t>(c.x), cy = static_cast<std::size_t>(c.y);
    Eigen::VectorXd v(kPatchSize * kPatchSize);
    std::size_t n = 0;
    for (std::size_t y = cy - kHalfPatch; y <= cy + kHalfPatch; ++y)
      for (std::size_t x = cx - kHalfPatch; x <= cx + kHalfPatch; ++x) v[n++] = img.at(y, x);
    v.array() -= v.mean();
    const double norm = v.norm();
    if (norm < 1e-12) continue;
    kept.push_back(v / norm);
    d.points.push_back(c);
  }
  d.rows.resize(static_cast<Eigen::Index>(kept.size()), kPatchSize * kPatchSize);
  for (std::size_t i = 0; i < kept.size(); ++i) d.rows.row(static_cast<Eigen::Index>(i)) = kept[i].transpose();
  return d;
}

}  // namespace

std::vector<Point2> harris_corners(const Plane& img, const MatchOptions& opts) {
  const std::size_t margin = kHalfPatch + 1;
  if (img.width <= 2 * margin || img.height <= 2 * margin) return {};
  const Plane r = harris_response(img, opts.harris_k);
  double peak = 0.0;
  for (std::size_t y = margin; y < img.height - margin; ++y)
    for (std::size_t x = margin; x < img.width - margin; ++x) peak = std::max(peak, r.at(y, x));
  if (!(peak > 1e-14)) return {};
  const double threshold = opts.quality * peak;

  struct Scored {
    double response;
    Point2 p;
  };
  std::vector<Scored> found;
  const long rad = static_cast<long>(opts.nms_radius);
  for (std::size_t y = margin; y < img.height - margin; ++y)
    for (std::size_t x = margin; x < img.width - margin; ++x) {
      const double v = r.at(y, x);
      if (v <= threshold) continue;
      bool is_max = true;
      for (long dy = -rad; dy <= rad && is_max; ++dy)
        for (long dx = -rad; dx <= rad; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(img.height) || xx >= static_cast<long>(img.width)) continue;
          const double n = r.at(yy, xx);
          // ties go to the earlier pixel in raster order
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (n > v || (earlier && n == v)) {
            is_max = false;
            break;
          }
        }
      if (is_max) found.push_back({v, {static_cast<double>(x), static_cast<double>(y)}});
    }
  std::stable_sort(found.begin(), found.end(), [](const Scored& a, const Scored& b) { return a.response > b.response; });
  if (found.size() > opts.max_corners) found.resize(opts.max_corners);
  std::vector<Point2> out;
  out.reserve(found.size());
  for (const auto& s : found) out.push_back(s.p);
  return out;
}

std::vector<Correspondence> detect_and_match(const Plane& src, const Plane& dst, const MatchOptions& opts) {
  if (src.width != dst.width || src.height != dst.height) throw DimensionError("detect_and_match: size mismatch");
  if (std::min(src.width, src.height) < 32) throw DimensionError("detect_and_match: images must be at least 32 px");
  const Descriptors a = describe(src, harris_corners(src, opts));
  const Descriptors b = describe(dst, harris_corners(dst, opts));
  if (a.points.size() < kMinCorners || b.points.size() < kMinCorners) {
    throw InsufficientFeaturesError("too few corners (" + std::to_string(a.points.size()) + " source, " +
                                    std::to_string(b.points.size()) + " target)");
  }

  const Eigen::MatrixXd ncc = a.rows * b.rows.transpose();
  std::vector<Correspondence> out;
  for (Eigen::Index i = 0; i < ncc.rows(); ++i) {
    Eigen::Index best = 0;
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    for (Eigen::Index j = 0; j < ncc.cols(); ++j) {
      const double d = 2.0 * (1.0 - ncc(i, j));
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    const double score = ncc(i, best);
    if (score < opts.min_ncc || !(d1 < opts.ratio * d2)) continue;
    out.push_back({a.points[static_cast<std::size_t>(i)], b.points[static_cast<std::size_t>(best)],
                   std::clamp(score, 0.0, 1.0)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Correspondence& x, const Correspondence& y) { return x.score > y.score; });
  return out;
}

// Homography estimation ------------------------------------------------------

namespace {

Eigen::Matrix3d normalizing_transform(const std::vector<Point2>& pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

Homography dlt(const std::vector<Correspondence>& matches, const std::vector<std::size_t>& idx) {
  std::vector<Point2> ps, qs;
  for (std::size_t i : idx) {
    ps.push_back(matches[i].p);
    qs.push_back(matches[i].q);
  }
  const Eigen::Matrix3d tp = normalizing_transform(ps), tq = normalizing_transform(qs);
  Eigen::MatrixXd a(2 * idx.size(), 9);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Eigen::Vector3d p = tp * Eigen::Vector3d(ps[k].x, ps[k].y, 1.0);
    const Eigen::Vector3d q = tq * Eigen::Vector3d(qs[k].x, qs[k].y, 1.0);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    const auto r = static_cast<Eigen::Index>(2 * k);
    a.row(r) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(r + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8];
  return Homography::from_matrix(tq.inverse() * hn * tp);
}

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool degenerate(const std::vector<Point2>& pts) {
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j)
      for (std::size_t k = j + 1; k < 4; ++k)
        if (std::abs(cross(pts[i], pts[j], pts[k])) < 1e-6) return true;
  return false;
}

double reprojection_error(const Homography& h, const Correspondence& c) {
  const Point2 r = h.apply(c.p);
  const double e = std::hypot(r.x - c.q.x, r.y - c.q.y);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

struct Consensus {
  std::vector<bool> mask;
  std::size_t count = 0;
  double error_sum = 0.0;
};

Consensus consensus(const Homography& h, const std::vector<Correspondence>& matches, double inlier_px) {
  Consensus c;
  c.mask.assign(matches.size(), false);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const double e = reprojection_error(h, matches[i]);
    if (e < inlier_px) {
      c.mask[i] = true;
      ++c.count;
      c.error_sum += e;
    }
  }
  return c;
}

bool better(const Consensus& a, const Consensus& b) {
  return a.count > b.count || (a.count == b.count && a.error_sum < b.error_sum);
}

std::vector<std::size_t> indices_of(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

}  // namespace

Homography fit_homography(const std::vector<Correspondence>& matches) {
  if (matches.size() < 4) throw ArgumentError("a homography needs at least 4 correspondences");
  std::vector<std::size_t> all(matches.size());
  std::iota(all.begin(), all.end(), 0);
  return dlt(matches, all);
}

HomographyFit estimate_homography(const std::vector<Correspondence>& matches, const RansacOptions& opts) {
  if (matches.size() < 4) throw ArgumentError("a homography needs at least 4 correspondences");
  if (!(opts.inlier_px > 0.0)) throw ArgumentError("inlier_px must be positive");

  std::mt19937_64 rng(opts.seed);
  Homography best_h;
  Consensus best;
  const std::size_t iters = matches.size() == 4 ? 1 : std::max<std::size_t>(opts.iters, 1);
  std::vector<std::size_t> sample(4);
  std::vector<Point2> ps(4), qs(4);
  for (std::size_t it = 0; it < iters; ++it) {
    if (matches.size() == 4) {
      std::iota(sample.begin(), sample.end(), 0);
    } else {
      for (std::size_t k = 0; k < 4; ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
        std::size_t idx;
        do idx = pick(rng);
        while (std::find(sample.begin(), sample.begin() + static_cast<long>(k), idx) != sample.begin() + static_cast<long>(k));
        sample[k] = idx;
      }
    }
    for (std::size_t k = 0; k < 4; ++k) {
      ps[k] = matches[sample[k]].p;
      qs[k] = matches[sample[k]].q;
    }
    if (degenerate(ps) || degenerate(qs)) continue;
    const Homography h = dlt(matches, sample);
    if (!h.h.allFinite()) continue;
    Consensus c = consensus(h, matches, opts.inlier_px);
    if (better(c, best)) {
      best = std::move(c);
      best_h = h;
    }
  }
  if (best.count < std::max<std::size_t>(opts.min_inliers, 4)) {
    throw AlignmentError("RANSAC consensus of " + std::to_string(best.count) + " below the required " +
                         std::to_string(opts.min_inliers));
  }

  // refit on the consensus set until it stops growing
  for (int round = 0; round < 5; ++round) {
    const Homography refit = dlt(matches, indices_of(best.mask));
    Consensus c = consensus(refit, matches, opts.inlier_px);
    if (c.count < best.count) break;
    const bool grew = c.count > best.count;
    best = std::move(c);
    best_h = refit;
    if (!grew) break;
  }

  HomographyFit fit;
  fit.h = best_h;
  fit.inlier_count = best.count;
  fit.inliers = std::move(best.mask);
  fit.mean_error = best.count ? best.error_sum / static_cast<double>(best.count) : 0.0;
  return fit;
}

// Warping --------------------------------------------------------------------

Plane warp(const Plane& img, const Homography& h) {
  const Eigen::Matrix3d inv = h.inverse().h;
  Plane out(img.width, img.height);
  const double max_x = static_cast<double>(img.width) - 1.0, max_y = static_cast<double>(img.height) - 1.0;
  constexpr double eps = 1e-9;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const Eigen::Vector3d s = inv * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
      if (s.z() == 0.0) continue;
      double u = s.x() / s.z(), v = s.y() / s.z();
      if (!(u >= -eps && u <= max_x + eps && v >= -eps && v <= max_y + eps)) continue;
      u = std::clamp(u, 0.0, max_x);
      v = std::clamp(v, 0.0, max_y);
      const std::size_t x0 = static_cast<std::size_t>(u), y0 = static_cast<std::size_t>(v);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
      const double a = img.at(y0, x0), b = img.at(y0, x1), c = img.at(y1, x0), d = img.at(y1, x1);
      const double top = a + fx * (b - a);
      const double bottom = c + fx * (d - c);
      out.at(y, x) = top + fy * (bottom - top);
    }
  return out;
}

Plane warp_mosaic(const Plane& mosaic, const Homography& h, CfaPhase phase) {
  PackedRaw packed = pack_raw(mosaic, phase);
  const auto off = cfa_offsets(phase);
  for (std::size_t k = 0; k < 4; ++k) {
    Eigen::Matrix3d t;
    t << 2, 0, static_cast<double>(off[k].dx), 0, 2, static_cast<double>(off[k].dy), 0, 0, 1;
    const Eigen::Matrix3d t_inv = t.inverse();
    packed.planes[k] = warp(packed.planes[k], Homography::from_matrix(t_inv * h.h * t));
  }
  return unpack_raw(packed, phase);
}

BayerRaw warp_raw(const BayerRaw& frame, const Homography& h) {
  frame.validate();
  Plane codes(frame.width, frame.height);
  for (std::size_t i = 0; i < codes.data.size(); ++i) {
    codes.data[i] = static_cast<double>(frame.data[i]) - static_cast<double>(frame.black_level);
  }
  const Plane warped = frame.cfa_phase == CfaPhase::Mono ? warp(codes, h) : warp_mosaic(codes, h, frame.cfa_phase);
  BayerRaw out = frame;
  const double top = static_cast<double>((1u << frame.bit_depth) - 1u);
  for (std::size_t i = 0; i < warped.data.size(); ++i) {
    const double v = std::round(warped.data[i] + static_cast<double>(frame.black_level));
    out.data[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, top));
  }
  return out;
}

Plane detection_plane(const BayerRaw& frame) {
  const Plane src = normalize(frame);
  const long w = static_cast<long>(src.width), h = static_cast<long>(src.height);
  Plane out(src.width, src.height);
  static constexpr double k[3] = {1.0, 2.0, 1.0};
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          // mirror so the CFA pattern continues across the border
          long yy = y + dy, xx = x + dx;
          if (yy < 0) yy = -yy;
          if (yy >= h) yy = 2 * h - 2 - yy;
          if (xx < 0) xx = -xx;
          if (xx >= w) xx = 2 * w - 2 - xx;
          acc += k[dy + 1] * k[dx + 1] * src.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc / 16.0;
    }
  return out;
}

BracketAlignment align_bracket(const BayerRaw& ref_src, const BayerRaw& ref_dst, const std::vector<BayerRaw>& bracket,
                               const RansacOptions& ransac, const MatchOptions& match) {
  const auto matches = detect_and_match(detection_plane(ref_src), detection_plane(ref_dst), match);
  const HomographyFit fit = estimate_homography(matches, ransac);

  BracketAlignment out;
  out.report.h = fit.h;
  out.report.matches = matches.size();
  out.report.inliers = fit.inlier_count;
  out.report.inlier_ratio = matches.empty() ? 0.0 : static_cast<double>(fit.inlier_count) / matches.size();
  out.report.mean_reproj_error = fit.mean_error;
  out.frames.reserve(bracket.size());
  for (const auto& frame : bracket) out.frames.push_back(warp_raw(frame, fit.h));
  return out;
}

}  // namespace darkforge
