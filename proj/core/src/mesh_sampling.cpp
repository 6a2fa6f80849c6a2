#include "xrec/mesh_sampling.hpp"

#include <algorithm>
#include <cmath>

#include "xrec/rng.hpp"

namespace xrec {

std::vector<std::array<double, 3>> sample_mesh_points(const Mesh& mesh, int count,
                                                      std::uint64_t seed) {
  std::vector<std::array<double, 3>> out;
  if (mesh.triangles.empty() || count <= 0) return out;

  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const auto& a = mesh.vertices[tri[0]];
    const auto& b = mesh.vertices[tri[1]];
    const auto& c = mesh.vertices[tri[2]];
    const double u[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double v[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const double n0 = u[1] * v[2] - u[2] * v[1];
    const double n1 = u[2] * v[0] - u[0] * v[2];
    const double n2 = u[0] * v[1] - u[1] * v[0];
    total += 0.5 * std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
    cum[t] = total;
  }
  if (total <= 0.0) return out;

  Rng rng(seed);
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double r = rng.uniform(0.0, total);
    const std::size_t t =
        std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    double b0 = rng.uniform(), b1 = rng.uniform();
    if (b0 + b1 > 1.0) {
      b0 = 1.0 - b0;
      b1 = 1.0 - b1;
    }
    const auto& a = mesh.vertices[tri[0]];
    const auto& b = mesh.vertices[tri[1]];
    const auto& c = mesh.vertices[tri[2]];
    out.push_back({a[0] + b0 * (b[0] - a[0]) + b1 * (c[0] - a[0]),
                   a[1] + b0 * (b[1] - a[1]) + b1 * (c[1] - a[1]),
                   a[2] + b0 * (b[2] - a[2]) + b1 * (c[2] - a[2])});
  }
  return out;
}

}  // namespace xrec
