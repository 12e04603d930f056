#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/labels.hpp"
#include "stmixer/volume.hpp"

namespace stmixer {

struct NoduleDetection {
  int id = 0;
  int timepoint = 0;  // 0, 1, 2 for consecutive scans
  std::array<double, 3> center_mm{0, 0, 0};
  Volume3D mask;  // binary; >0.5 means set
  Texture texture = Texture::solid;
};

struct NodulePair {
  int earlier_index = -1;  // position in the earlier list
  int later_index = -1;    // position in the later list
  double distance_mm = 0;
};

struct PairingResult {
  std::vector<NodulePair> pairs;
  std::vector<int> unmatched_earlier;  // disappeared nodules
  std::vector<int> unmatched_later;    // new nodules
};

inline double center_distance_mm(const NoduleDetection& a, const NoduleDetection& b) {
  double s = 0;
  for (int k = 0; k < 3; ++k) {
    const double d = a.center_mm[static_cast<size_t>(k)] - b.center_mm[static_cast<size_t>(k)];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace detail {

inline void check_same_timepoint(const std::vector<NoduleDetection>& list, const char* which) {
  for (size_t i = 1; i < list.size(); ++i) {
    if (list[i].timepoint != list[0].timepoint) {
      throw std::invalid_argument(std::string("pair_nodules: mixed timepoints in ") + which +
                                  " list (" + std::to_string(list[0].timepoint) + " vs " +
                                  std::to_string(list[i].timepoint) + ")");
    }
  }
}

}  // namespace detail

// Mutual-nearest-neighbor matching between two scans: i and j are paired iff
// each is the other's nearest candidate with center distance strictly below
// the threshold. Nearest-candidate ties go to the lowest index, so the result
// is deterministic. Detections left over are reported as new/disappeared.
inline PairingResult pair_nodules(const std::vector<NoduleDetection>& earlier,
                                  const std::vector<NoduleDetection>& later,
                                  double threshold_mm = 1.5) {
  detail::check_same_timepoint(earlier, "earlier");
  detail::check_same_timepoint(later, "later");
  if (!earlier.empty() && !later.empty() && earlier[0].timepoint >= later[0].timepoint) {
    throw std::invalid_argument("pair_nodules: earlier timepoint " +
                                std::to_string(earlier[0].timepoint) + " does not precede " +
                                std::to_string(later[0].timepoint));
  }
  const int ne = static_cast<int>(earlier.size());
  const int nl = static_cast<int>(later.size());
  const double kNone = std::numeric_limits<double>::infinity();
  std::vector<int> nn_e(static_cast<size_t>(ne), -1), nn_l(static_cast<size_t>(nl), -1);
  std::vector<double> best_e(static_cast<size_t>(ne), kNone), best_l(static_cast<size_t>(nl), kNone);
  for (int i = 0; i < ne; ++i) {
    for (int j = 0; j < nl; ++j) {
      const double d = center_distance_mm(earlier[static_cast<size_t>(i)],
                                          later[static_cast<size_t>(j)]);
      if (d >= threshold_mm) continue;
      if (d < best_e[static_cast<size_t>(i)]) {
        best_e[static_cast<size_t>(i)] = d;
        nn_e[static_cast<size_t>(i)] = j;
      }
      if (d < best_l[static_cast<size_t>(j)]) {
        best_l[static_cast<size_t>(j)] = d;
        nn_l[static_cast<size_t>(j)] = i;
      }
    }
  }
  PairingResult res;
  std::vector<bool> later_used(static_cast<size_t>(nl), false);
  for (int i = 0; i < ne; ++i) {
    const int j = nn_e[static_cast<size_t>(i)];
    if (j >= 0 && nn_l[static_cast<size_t>(j)] == i) {
      res.pairs.push_back({i, j, best_e[static_cast<size_t>(i)]});
      later_used[static_cast<size_t>(j)] = true;
    } else {
      res.unmatched_earlier.push_back(i);
    }
  }
  for (int j = 0; j < nl; ++j) {
    if (!later_used[static_cast<size_t>(j)]) res.unmatched_later.push_back(j);
  }
  return res;
}

// Axial slice with the most set voxels; ties go to the lowest z index.
inline int max_area_slice(const Volume3D& mask) {
  int best = -1;
  long best_count = 0;
  for (int iz = 0; iz < mask.nz; ++iz) {
    long count = 0;
    for (int iy = 0; iy < mask.ny; ++iy) {
      for (int ix = 0; ix < mask.nx; ++ix) {
        if (mask.at(iz, iy, ix) > 0.5f) ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best = iz;
    }
  }
  if (best < 0) throw std::invalid_argument("max_area_slice: empty mask");
  return best;
}

struct DiameterMeasurement {
  double value_mm = 0;     // longest side of the minimum-area enclosing rectangle
  int slice_index = -1;    // axial slice the measurement was taken on
  double rect_angle = 0;   // rectangle orientation, radians in [0, pi/2)
};

namespace detail {

using Point2 = std::array<double, 2>;

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Monotone-chain convex hull, counter-clockwise, no collinear points kept.
inline std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const size_t n = pts.size();
  if (n <= 2) return pts;
  std::vector<Point2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

struct RectFit {
  double area = std::numeric_limits<double>::infinity();
  double longest = 0;
  double angle = 0;
};

// Width/height of the bounding rectangle aligned with direction (c, s).
inline RectFit rect_at_angle(const std::vector<Point2>& pts, double c, double s) {
  double lo_u = std::numeric_limits<double>::infinity(), hi_u = -lo_u;
  double lo_v = lo_u, hi_v = -lo_u;
  for (const Point2& p : pts) {
    const double u = c * p[0] + s * p[1];
    const double v = -s * p[0] + c * p[1];
    lo_u = std::min(lo_u, u);
    hi_u = std::max(hi_u, u);
    lo_v = std::min(lo_v, v);
    hi_v = std::max(hi_v, v);
  }
  RectFit fit;
  const double w = hi_u - lo_u, h = hi_v - lo_v;
  fit.area = w * h;
  fit.longest = std::max(w, h);
  fit.angle = std::atan2(s, c);
  return fit;
}

inline double normalize_angle(double a) {
  const double half_pi = std::acos(0.0);
  a = std::fmod(a, half_pi);
  if (a < 0) a += half_pi;
  return a;
}

}  // namespace detail

// Minimum-area rectangle enclosing the given voxels of one slice, via the
// convex hull of their corner points (voxel (r,c) spans [r-0.5,r+0.5] x
// [c-0.5,c+0.5] in index space, scaled by spacing). The optimal rectangle is
// flush with a hull edge, so only hull-edge directions are tried. Staircase
// shaped voxel unions often admit several minimum-area rectangles with very
// different long sides; areas tied within a small relative tolerance resolve
// to the shortest long side so the reported diameter is deterministic.
inline DiameterMeasurement min_rect_longest_side(const std::vector<std::array<int, 2>>& voxels,
                                                 std::array<double, 2> spacing) {
  if (voxels.empty()) throw std::invalid_argument("min_rect_longest_side: no voxels");
  if (!(spacing[0] > 0) || !(spacing[1] > 0)) {
    throw std::invalid_argument("min_rect_longest_side: non-positive spacing");
  }
  std::vector<detail::Point2> corners;
  corners.reserve(voxels.size() * 4);
  for (const auto& v : voxels) {
    const double r = static_cast<double>(v[0]), c = static_cast<double>(v[1]);
    corners.push_back({(r - 0.5) * spacing[0], (c - 0.5) * spacing[1]});
    corners.push_back({(r - 0.5) * spacing[0], (c + 0.5) * spacing[1]});
    corners.push_back({(r + 0.5) * spacing[0], (c - 0.5) * spacing[1]});
    corners.push_back({(r + 0.5) * spacing[0], (c + 0.5) * spacing[1]});
  }
  const std::vector<detail::Point2> hull = detail::convex_hull(std::move(corners));
  DiameterMeasurement m;
  if (hull.size() < 3) {
    // Degenerate (collinear) point set: the rectangle is the segment itself.
    detail::RectFit fit = detail::rect_at_angle(hull, 1.0, 0.0);
    m.value_mm = fit.longest;
    m.rect_angle = 0.0;
    return m;
  }
  std::vector<detail::RectFit> fits;
  fits.reserve(hull.size());
  double min_area = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < hull.size(); ++i) {
    const detail::Point2& a = hull[i];
    const detail::Point2& b = hull[(i + 1) % hull.size()];
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len = std::hypot(dx, dy);
    if (len == 0) continue;
    fits.push_back(detail::rect_at_angle(hull, dx / len, dy / len));
    min_area = std::min(min_area, fits.back().area);
  }
  detail::RectFit best;
  best.longest = std::numeric_limits<double>::infinity();
  for (const detail::RectFit& fit : fits) {
    if (fit.area <= min_area * (1.0 + 1e-4) && fit.longest < best.longest) best = fit;
  }
  m.value_mm = best.longest;
  m.rect_angle = detail::normalize_angle(best.angle);
  return m;
}

// Diameter per the dataset-construction rule: the longest side of the
// minimum-area circumscribed rectangle on the maximal-area axial slice.
inline DiameterMeasurement measure_diameter(const Volume3D& mask) {
  const int iz = max_area_slice(mask);
  std::vector<std::array<int, 2>> voxels;
  for (int iy = 0; iy < mask.ny; ++iy) {
    for (int ix = 0; ix < mask.nx; ++ix) {
      if (mask.at(iz, iy, ix) > 0.5f) voxels.push_back({iy, ix});
    }
  }
  DiameterMeasurement m = min_rect_longest_side(voxels, {mask.spacing[1], mask.spacing[2]});
  m.slice_index = iz;
  return m;
}

// Diameter change of more than `threshold_mm` in either direction leaves the
// stability band; exactly at the threshold still counts as stability.
inline EvolutionLabel label_evolution(double d_prev_mm, double d_curr_mm,
                                      double threshold_mm = 1.5) {
  if (!(d_prev_mm > 0) || !(d_curr_mm > 0)) {
    throw std::invalid_argument("label_evolution: non-positive diameter (" +
                                std::to_string(d_prev_mm) + ", " + std::to_string(d_curr_mm) +
                                ")");
  }
  const double delta = d_curr_mm - d_prev_mm;
  if (delta > threshold_mm) return EvolutionLabel::dilatation;
  if (delta < -threshold_mm) return EvolutionLabel::shrinkage;
  return EvolutionLabel::stability;
}

}  // namespace stmixer
