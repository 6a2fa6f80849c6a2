#pragma once

#include <array>
#include <cstdint>

#include "xrec/grid.hpp"

namespace xrec {

/// Controls for procedural CT-like knee phantoms. All geometry scales with
/// `size`; jitters are fractions of it.
struct PhantomSpec {
  int size = 32;
  std::uint64_t seed = 1;
  double bone_intensity_lo = 0.6;
  double bone_intensity_hi = 0.9;
  double soft_tissue_intensity = 0.2;
  double cortical_rim_boost = 0.15;  // added on the 1-voxel bone boundary shell
  double position_jitter = 0.03;     // per-bone center offset, fraction of size
  double scale_jitter = 0.10;        // per-bone radius multiplier in [1-j, 1+j]

  void validate() const;
};

struct PhantomCase {
  Volume intensity;    // spacing 1 mm, values in [0, ~1.05]
  LabelVolume labels;  // classes 0..4
};

/// Deterministic phantom: femur (shaft capsule + condyle spheres) in the
/// upper half, tibia (shaft + plateau ellipsoid) and a thin parallel fibula
/// in the lower half, patella on the anterior (d1-low) side, all wrapped in
/// a soft-tissue ellipsoid.
PhantomCase generate_phantom(const PhantomSpec& spec);

enum class Interp { trilinear, nearest };

/// Resamples with the inverse rotation about the volume center (Euler order
/// d0 -> d1 -> d2, degrees, each |angle| <= 45). Out-of-bounds source reads
/// fill with the volume's minimum value.
Volume rotate_volume(const Volume& v, std::array<double, 3> angles_deg, Interp interp);

/// Nearest-neighbor label resampling; out-of-bounds sources clamp to the
/// nearest border voxel, so no class can appear that was not already present.
LabelVolume rotate_labels(const LabelVolume& labels, std::array<double, 3> angles_deg);

struct AugmentedCase {
  Volume intensity;
  LabelVolume labels;
  std::array<double, 3> angles_deg;
};

/// Draws three angles uniformly from (-5, 5) degrees and applies the same
/// rotation to both grids (trilinear for intensity, nearest for labels).
AugmentedCase augment_case(const Volume& intensity, const LabelVolume& labels,
                           std::uint64_t seed);

}  // namespace xrec
