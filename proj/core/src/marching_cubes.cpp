#include "xrec/marching_cubes.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mc_tables.hpp"

namespace xrec {

namespace {

struct EdgeGeom {
  int axis;             // lattice axis the edge runs along
  int base[3];          // offset of the edge's lower corner within the cell
};

// derived once from the corner tables
std::array<EdgeGeom, 12> edge_geometry() {
  std::array<EdgeGeom, 12> g{};
  for (int e = 0; e < 12; ++e) {
    const int* a = mc::kCornerOffset[mc::kEdgeCorner[e][0]];
    const int* b = mc::kCornerOffset[mc::kEdgeCorner[e][1]];
    for (int ax = 0; ax < 3; ++ax) {
      if (a[ax] != b[ax]) g[e].axis = ax;
      g[e].base[ax] = std::min(a[ax], b[ax]);
    }
  }
  return g;
}

}  // namespace

Mesh marching_cubes(const Volume& field, double iso) {
  if (field.channels != 1)
    throw std::invalid_argument("marching_cubes: expected single-channel field");
  const auto [d0, d1, d2] = field.dims;
  if (d0 < 2 || d1 < 2 || d2 < 2)
    throw std::invalid_argument("marching_cubes: dims must be >= 2 per axis");
  for (float v : field.data)
    if (!std::isfinite(v))
      throw std::invalid_argument("marching_cubes: non-finite field value");

  static const std::array<EdgeGeom, 12> geom = edge_geometry();
  const Spacing3 sp = field.spacing_mm;

  // one vertex slot per lattice edge: axis-major, then (i0,i1,i2) of the
  // edge's lower endpoint
  const std::int64_t stride1 = static_cast<std::int64_t>(d1) * d2;
  const std::int64_t per_axis = static_cast<std::int64_t>(d0) * d1 * d2;
  std::vector<std::int32_t> edge_vertex(3 * per_axis, -1);

  Mesh mesh;
  double corner[8];
  std::int64_t edge_key[12];

  for (int i0 = 0; i0 + 1 < d0; ++i0)
    for (int i1 = 0; i1 + 1 < d1; ++i1)
      for (int i2 = 0; i2 + 1 < d2; ++i2) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          corner[c] = field.at(0, i0 + mc::kCornerOffset[c][0], i1 + mc::kCornerOffset[c][1],
                               i2 + mc::kCornerOffset[c][2]);
          if (corner[c] < iso) cube |= 1 << c;
        }
        const int edges = mc::kEdgeTable[cube];
        if (edges == 0) continue;

        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const EdgeGeom& eg = geom[e];
          const int b0 = i0 + eg.base[0], b1 = i1 + eg.base[1], b2 = i2 + eg.base[2];
          const std::int64_t key = eg.axis * per_axis + b0 * stride1 +
                                   static_cast<std::int64_t>(b1) * d2 + b2;
          edge_key[e] = key;
          if (edge_vertex[key] >= 0) continue;

          const double fa = corner[mc::kEdgeCorner[e][0]];
          const double fb = corner[mc::kEdgeCorner[e][1]];
          // crossing edges always have fa != fb
          double t = (iso - fa) / (fb - fa);
          // t is measured from corner[0] of the edge; convert to the lower corner
          const int* ca = mc::kCornerOffset[mc::kEdgeCorner[e][0]];
          if (ca[eg.axis] != eg.base[eg.axis]) t = 1.0 - t;

          double pos[3] = {double(b0), double(b1), double(b2)};
          pos[eg.axis] += t;
          edge_vertex[key] = static_cast<std::int32_t>(mesh.vertices.size());
          mesh.vertices.push_back({pos[0] * sp[0], pos[1] * sp[1], pos[2] * sp[2]});
        }

        for (int t = 0; mc::kTriTable[cube][t] != -1; t += 3) {
          const int v0 = edge_vertex[edge_key[mc::kTriTable[cube][t]]];
          const int v1 = edge_vertex[edge_key[mc::kTriTable[cube][t + 1]]];
          const int v2 = edge_vertex[edge_key[mc::kTriTable[cube][t + 2]]];
          if (v0 == v1 || v1 == v2 || v0 == v2) continue;  // degenerate sliver
          mesh.triangles.push_back({v0, v1, v2});
        }
      }
  return mesh;
}

namespace {

Volume box_smooth(const Volume& v) {
  const auto [d0, d1, d2] = v.dims;
  Volume out(v.dims, 1, v.spacing_mm);
  for (int i0 = 0; i0 < d0; ++i0)
    for (int i1 = 0; i1 < d1; ++i1)
      for (int i2 = 0; i2 < d2; ++i2) {
        double acc = 0.0;
        int count = 0;
        for (int a = std::max(0, i0 - 1); a <= std::min(d0 - 1, i0 + 1); ++a)
          for (int b = std::max(0, i1 - 1); b <= std::min(d1 - 1, i1 + 1); ++b)
            for (int c = std::max(0, i2 - 1); c <= std::min(d2 - 1, i2 + 1); ++c) {
              acc += v.at(0, a, b, c);
              ++count;
            }
        out.at(0, i0, i1, i2) = static_cast<float>(acc / count);
      }
  return out;
}

}  // namespace

std::array<Mesh, 4> extract_bones(const LabelVolume& labels) {
  labels.validate_classes();
  std::array<Mesh, 4> meshes;
  for (int k = 1; k <= 4; ++k) {
    Volume indicator(labels.dims, 1, labels.spacing_mm);
    for (std::int64_t i = 0; i < labels.dims.voxels(); ++i)
      indicator.data[i] = labels.data[i] == k ? 1.0f : 0.0f;
    meshes[k - 1] = marching_cubes(box_smooth(indicator), 0.5);
    meshes[k - 1].class_id = k;
  }
  return meshes;
}

std::array<Mesh, 4> extract_bones(const Volume& prob) {
  if (prob.channels != 5)
    throw std::invalid_argument("extract_bones: expected 5-channel probabilities");
  std::array<Mesh, 4> meshes;
  const std::int64_t n = prob.dims.voxels();
  for (int k = 1; k <= 4; ++k) {
    Volume field(prob.dims, 1, prob.spacing_mm);
    std::copy(prob.data.begin() + k * n, prob.data.begin() + (k + 1) * n, field.data.begin());
    meshes[k - 1] = marching_cubes(field, 0.5);
    meshes[k - 1].class_id = k;
  }
  return meshes;
}

}  // namespace xrec
