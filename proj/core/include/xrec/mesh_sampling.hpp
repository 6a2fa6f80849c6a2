#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "xrec/grid.hpp"

namespace xrec {

/// Deterministic area-weighted surface samples (uniform barycentric draws).
/// Used by evaluation when a denser operand than the raw vertex set is
/// wanted for Chamfer distances.
std::vector<std::array<double, 3>> sample_mesh_points(const Mesh& mesh, int count,
                                                      std::uint64_t seed);

}  // namespace xrec
