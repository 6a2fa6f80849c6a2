#pragma once

#include <array>

#include "xrec/grid.hpp"

namespace xrec {

/// Isosurface of a single-channel scalar grid via the 256-case marching
/// cubes tables, vertices linearly interpolated to the iso crossing and
/// scaled into mm by the volume spacing. Triangles are wound so normals
/// follow -grad(field) (outward for fields that are high inside).
/// Shared vertices are deduplicated through an edge-keyed map, so surfaces
/// away from the volume border are watertight.
Mesh marching_cubes(const Volume& field, double iso);

/// One mesh per bone class 1..4 (index class-1), iso 0.5.
/// Label input: per-class indicator smoothed by one 3x3x3 box pass.
std::array<Mesh, 4> extract_bones(const LabelVolume& labels);

/// Probability input: per-class channel used raw.
std::array<Mesh, 4> extract_bones(const Volume& prob);

}  // namespace xrec
