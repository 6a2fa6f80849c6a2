#pragma once

#include "xrec/grid.hpp"

namespace xrec {

/// Eq-style weight map constants; sigma is in voxel units.
struct DwmParams {
  double gamma = 8.0;
  double sigma = 10.0;

  void validate() const {
    if (gamma < 0.0) throw std::invalid_argument("DwmParams: gamma must be >= 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("DwmParams: sigma must be > 0");
  }
};

/// Binary map of bone-surface voxels: label != 0 and at least one 6-neighbor
/// carries a different label (bone-bone interfaces count); bone voxels on the
/// volume border always count.
Volume surface_voxels(const LabelVolume& labels);

struct DistanceField {
  Volume distances;    // Euclidean voxel distance to the nearest surface voxel
  bool empty_surface;  // no surface at all: distances are +inf everywhere
};

/// Exact Euclidean distance transform (separable squared-distance passes).
/// Squared distances are integers, so results match a brute-force scan bit
/// for bit. An empty surface yields the all-infinite sentinel plus a flag.
DistanceField distance_transform(const Volume& surface);

/// Elementwise 1 + gamma * exp(-d / sigma); infinite d maps to exactly 1.
Volume weight_map(const Volume& distances, const DwmParams& params);

/// surface_voxels -> distance_transform -> weight_map in one call.
Volume compute_dwm(const LabelVolume& labels, const DwmParams& params);

}  // namespace xrec
