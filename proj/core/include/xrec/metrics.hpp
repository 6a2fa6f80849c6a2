#pragma once

#include <span>
#include <vector>

#include "xrec/grid.hpp"
#include "xrec/projection.hpp"

namespace xrec {

/// 2|X n Y| / (|X| + |Y|) over the voxel sets of class_id; 1 when both empty.
double dice(const LabelVolume& pred, const LabelVolume& gt, int class_id);

struct EmptyPointSet : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Symmetric mean nearest-neighbor distance between two non-empty point
/// sets, exact (grid-accelerated). Throws EmptyPointSet otherwise.
double chamfer(std::span<const std::array<double, 3>> a,
               std::span<const std::array<double, 3>> b);

/// Max-projection of the class indicator along the view ray.
Image2D project_mask(const LabelVolume& labels, int class_id, ViewAxis axis);

/// Boundary voxel centers (6-connectivity, border counts) of one class, mm.
std::vector<std::array<double, 3>> surface_points_mm(const LabelVolume& labels, int class_id);

/// Boundary pixel centers (8-connectivity, border counts) of a binary mask, mm.
std::vector<std::array<double, 3>> boundary_pixels_mm(const Image2D& mask);

struct GtMask2D {
  int class_id;
  ViewAxis view;
  Image2D mask;
};

struct Eval2dRecord {
  int class_id;
  ViewAxis view;
  double dice2d = 0.0;
  double chamfer2d_mm = 0.0;
  bool chamfer_failed = false;  // one side had no boundary pixels
};

/// Per provided (class, view) mask: 2D Dice of the projected prediction
/// against the mask, and 2D Chamfer between the boundary pixel sets.
/// View subsets are expressed by which masks are supplied.
std::vector<Eval2dRecord> evaluate_2d(const LabelVolume& pred,
                                      const std::vector<GtMask2D>& gt_masks);

/// Lookup helper; throws when the requested mask is absent.
const Image2D& find_mask(const std::vector<GtMask2D>& masks, int class_id, ViewAxis view);

/// Mean over the records of one class (averaging its available views).
struct ClassAverage {
  double dice2d = 0.0;
  double chamfer2d_mm = 0.0;
  int views = 0;
};
ClassAverage class_average(const std::vector<Eval2dRecord>& records, int class_id);

}  // namespace xrec
