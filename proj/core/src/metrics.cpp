#include "xrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xrec {

double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id) {
  if (pred.dims != gt.dims)
    throw std::invalid_argument("dice: dims mismatch " + pred.dims.str() + " vs " +
                                gt.dims.str());
  std::int64_t nx = 0, ny = 0, ni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool x = pred.data[i] == class_id;
    const bool y = gt.data[i] == class_id;
    nx += x;
    ny += y;
    ni += x && y;
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * double(ni) / double(nx + ny);
}

namespace {

using Point = std::array<double, 3>;

double dist2(const Point& a, const Point& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

/// Uniform-grid index over a point set with ring-expansion exact NN queries.
class GridIndex {
 public:
  explicit GridIndex(std::span<const Point> pts) : pts_(pts) {
    Point lo = pts[0], hi = pts[0];
    for (const Point& p : pts)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    lo_ = lo;
    const double diag = std::sqrt(dist2(lo, hi));
    h_ = std::max(diag / std::cbrt(double(pts.size())), 1e-9);
    for (int a = 0; a < 3; ++a)
      n_[a] = std::min<std::int64_t>(static_cast<std::int64_t>((hi[a] - lo[a]) / h_) + 1, 128);
    cells_.assign(static_cast<std::size_t>(n_[0]) * n_[1] * n_[2], {});
    for (std::size_t i = 0; i < pts.size(); ++i)
      cells_[cell_of(pts[i])].push_back(static_cast<int>(i));
  }

  double nearest_dist2(const Point& p) const {
    // unclamped virtual cell coordinates keep the ring lower bound valid
    std::int64_t c[3];
    for (int a = 0; a < 3; ++a)
      c[a] = static_cast<std::int64_t>(std::floor((p[a] - lo_[a]) / h_));

    double best = std::numeric_limits<double>::infinity();
    std::int64_t max_ring = 0;
    for (int a = 0; a < 3; ++a)
      max_ring = std::max({max_ring, c[a] + 1, n_[a] - c[a]});

    for (std::int64_t r = 0; r <= max_ring; ++r) {
      if (best <= double(r) * h_ * double(r) * h_) break;
      for_ring(c, r, [&](std::int64_t i0, std::int64_t i1, std::int64_t i2) {
        const auto& cell = cells_[(static_cast<std::size_t>(i0) * n_[1] + i1) * n_[2] + i2];
        for (int idx : cell) best = std::min(best, dist2(p, pts_[idx]));
      });
    }
    return best;
  }

 private:
  std::size_t cell_of(const Point& p) const {
    std::size_t idx = 0;
    for (int a = 0; a < 3; ++a) {
      std::int64_t c = static_cast<std::int64_t>(std::floor((p[a] - lo_[a]) / h_));
      c = std::clamp<std::int64_t>(c, 0, n_[a] - 1);
      idx = idx * n_[a] + static_cast<std::size_t>(c);
    }
    return idx;
  }

  template <typename F>
  void for_ring(const std::int64_t c[3], std::int64_t r, F&& f) const {
    const auto clampd = [&](std::int64_t v, int a) {
      return std::clamp<std::int64_t>(v, 0, n_[a] - 1);
    };
    if (r == 0) {
      const std::int64_t i0 = c[0], i1 = c[1], i2 = c[2];
      if (i0 >= 0 && i0 < n_[0] && i1 >= 0 && i1 < n_[1] && i2 >= 0 && i2 < n_[2])
        f(i0, i1, i2);
      return;
    }
    for (std::int64_t i0 = c[0] - r; i0 <= c[0] + r; ++i0) {
      if (i0 < 0 || i0 >= n_[0]) continue;
      const bool face0 = i0 == c[0] - r || i0 == c[0] + r;
      for (std::int64_t i1 = c[1] - r; i1 <= c[1] + r; ++i1) {
        if (i1 < 0 || i1 >= n_[1]) continue;
        const bool face1 = i1 == c[1] - r || i1 == c[1] + r;
        if (face0 || face1) {
          for (std::int64_t i2 = clampd(c[2] - r, 2); i2 <= clampd(c[2] + r, 2); ++i2)
            f(i0, i1, i2);
        } else {
          for (std::int64_t i2 : {c[2] - r, c[2] + r})
            if (i2 >= 0 && i2 < n_[2]) f(i0, i1, i2);
        }
      }
    }
  }

  std::span<const Point> pts_;
  Point lo_;
  double h_;
  std::int64_t n_[3];
  std::vector<std::vector<int>> cells_;
};

double directed_mean(std::span<const Point> from, const GridIndex& to_index) {
  double acc = 0.0;
  for (const Point& p : from) acc += std::sqrt(to_index.nearest_dist2(p));
  return acc / double(from.size());
}

}  // namespace

double chamfer(std::span<const Point> a, std::span<const Point> b) {
  if (a.empty() || b.empty())
    throw EmptyPointSet("chamfer: point set is empty (reconstruction failure)");
  const GridIndex ia(a), ib(b);
  return 0.5 * (directed_mean(a, ib) + directed_mean(b, ia));
}

Image2D project_mask(const LabelVolume& labels, int class_id, ViewAxis axis) {
  if (class_id < 0 || class_id >= kNumClasses)
    throw std::invalid_argument("project_mask: class_id out of range");
  const auto [d0, d1, d2] = labels.dims;
  const int cols = axis == ViewAxis::ap ? d2 : d1;
  Image2D img(d0, cols, labels.spacing_mm[0]);
  for (int h = 0; h < d0; ++h)
    for (int y = 0; y < d1; ++y)
      for (int x = 0; x < d2; ++x)
        if (labels.at(h, y, x) == class_id) img.at(h, axis == ViewAxis::ap ? x : y) = 1.0f;
  return img;
}

std::vector<std::array<double, 3>> surface_points_mm(const LabelVolume& labels, int class_id) {
  const auto [d0, d1, d2] = labels.dims;
  const Spacing3 sp = labels.spacing_mm;
  std::vector<Point> pts;
  for (int i0 = 0; i0 < d0; ++i0)
    for (int i1 = 0; i1 < d1; ++i1)
      for (int i2 = 0; i2 < d2; ++i2) {
        if (labels.at(i0, i1, i2) != class_id) continue;
        bool boundary = i0 == 0 || i0 == d0 - 1 || i1 == 0 || i1 == d1 - 1 || i2 == 0 ||
                        i2 == d2 - 1;
        if (!boundary)
          boundary = labels.at(i0 - 1, i1, i2) != class_id ||
                     labels.at(i0 + 1, i1, i2) != class_id ||
                     labels.at(i0, i1 - 1, i2) != class_id ||
                     labels.at(i0, i1 + 1, i2) != class_id ||
                     labels.at(i0, i1, i2 - 1) != class_id ||
                     labels.at(i0, i1, i2 + 1) != class_id;
        if (boundary) pts.push_back({i0 * sp[0], i1 * sp[1], i2 * sp[2]});
      }
  return pts;
}

std::vector<std::array<double, 3>> boundary_pixels_mm(const Image2D& mask) {
  std::vector<Point> pts;
  const int R = mask.rows, C = mask.cols;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      if (mask.at(r, c) == 0.0f) continue;
      bool boundary = false;
      for (int dr = -1; dr <= 1 && !boundary; ++dr)
        for (int dc = -1; dc <= 1 && !boundary; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr, cc = c + dc;
          boundary = rr < 0 || rr >= R || cc < 0 || cc >= C || mask.at(rr, cc) == 0.0f;
        }
      if (boundary) pts.push_back({r * mask.pixel_mm, c * mask.pixel_mm, 0.0});
    }
  return pts;
}

namespace {

double dice_2d(const Image2D& a, const Image2D& b) {
  std::int64_t nx = 0, ny = 0, ni = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0.0f;
    const bool y = b.data[i] != 0.0f;
    nx += x;
    ny += y;
    ni += x && y;
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * double(ni) / double(nx + ny);
}

}  // namespace

std::vector<Eval2dRecord> evaluate_2d(const LabelVolume& pred,
                                      const std::vector<GtMask2D>& gt_masks) {
  std::vector<Eval2dRecord> records;
  records.reserve(gt_masks.size());
  for (const auto& gt : gt_masks) {
    const Image2D proj = project_mask(pred, gt.class_id, gt.view);
    if (proj.rows != gt.mask.rows || proj.cols != gt.mask.cols)
      throw std::invalid_argument("evaluate_2d: mask dims do not match projection dims for " +
                                  std::string(bone_name(gt.class_id)) + "/" +
                                  view_name(gt.view));
    Eval2dRecord rec;
    rec.class_id = gt.class_id;
    rec.view = gt.view;
    rec.dice2d = dice_2d(proj, gt.mask);
    const auto bp = boundary_pixels_mm(proj);
    const auto bg = boundary_pixels_mm(gt.mask);
    if (bp.empty() || bg.empty()) {
      rec.chamfer_failed = true;
    } else {
      rec.chamfer2d_mm = chamfer(bp, bg);
    }
    records.push_back(rec);
  }
  return records;
}

const Image2D& find_mask(const std::vector<GtMask2D>& masks, int class_id, ViewAxis view) {
  for (const auto& m : masks)
    if (m.class_id == class_id && m.view == view) return m.mask;
  throw std::invalid_argument(std::string("missing ground-truth mask for ") +
                              bone_name(class_id) + "/" + view_name(view));
}

ClassAverage class_average(const std::vector<Eval2dRecord>& records, int class_id) {
  ClassAverage avg;
  for (const auto& r : records) {
    if (r.class_id != class_id || r.chamfer_failed) continue;
    avg.dice2d += r.dice2d;
    avg.chamfer2d_mm += r.chamfer2d_mm;
    avg.views += 1;
  }
  if (avg.views > 0) {
    avg.dice2d /= avg.views;
    avg.chamfer2d_mm /= avg.views;
  }
  return avg;
}

}  // namespace xrec
