#include "xrec/dwm.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "xrec/parallel.hpp"

namespace xrec {

Volume surface_voxels(const LabelVolume& labels) {
  labels.validate_classes();
  Volume out(labels.dims, 1, labels.spacing_mm);
  const auto [d0, d1, d2] = labels.dims;
  for (int i0 = 0; i0 < d0; ++i0)
    for (int i1 = 0; i1 < d1; ++i1)
      for (int i2 = 0; i2 < d2; ++i2) {
        const std::uint8_t v = labels.at(i0, i1, i2);
        if (v == 0) continue;
        bool surface = i0 == 0 || i0 == d0 - 1 || i1 == 0 || i1 == d1 - 1 || i2 == 0 ||
                       i2 == d2 - 1;
        if (!surface) {
          surface = labels.at(i0 - 1, i1, i2) != v || labels.at(i0 + 1, i1, i2) != v ||
                    labels.at(i0, i1 - 1, i2) != v || labels.at(i0, i1 + 1, i2) != v ||
                    labels.at(i0, i1, i2 - 1) != v || labels.at(i0, i1, i2 + 1) != v;
        }
        if (surface) out.at(0, i0, i1, i2) = 1.0f;
      }
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance lower envelope (Felzenszwalb-Huttenlocher). f holds
// squared distances (integers or +inf); writes the transformed row to out.
void edt_1d(const double* f, double* out, int n, std::vector<int>& v,
            std::vector<double>& z) {
  int k = -1;
  v.resize(n);
  z.resize(n + 1);
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s > z[k]) break;
      if (--k < 0) break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {  // no finite parabola in this row
    for (int q = 0; q < n; ++q) out[q] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = double(q) - v[j];
    out[q] = d * d + f[v[j]];
  }
}

}  // namespace

DistanceField distance_transform(const Volume& surface) {
  if (surface.channels != 1)
    throw std::invalid_argument("distance_transform: expected single-channel mask");
  const auto [d0, d1, d2] = surface.dims;
  const std::int64_t n = surface.dims.voxels();

  std::vector<double> sq(n);
  bool any = false;
  for (std::int64_t i = 0; i < n; ++i) {
    const bool on = surface.data[i] != 0.0f;
    any = any || on;
    sq[i] = on ? 0.0 : kInf;
  }

  DistanceField result;
  result.empty_surface = !any;
  result.distances = Volume(surface.dims, 1, surface.spacing_mm);
  if (!any) {
    std::fill(result.distances.data.begin(), result.distances.data.end(),
              std::numeric_limits<float>::infinity());
    return result;
  }

  const auto idx = [d1, d2](int i0, int i1, int i2) {
    return (static_cast<std::int64_t>(i0) * d1 + i1) * d2 + i2;
  };

  // pass along d2 (contiguous rows)
  parallel_for(static_cast<std::int64_t>(d0) * d1, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<int> v;
    std::vector<double> z, row(d2);
    for (std::int64_t r = lo; r < hi; ++r) {
      double* f = sq.data() + r * d2;
      edt_1d(f, row.data(), d2, v, z);
      std::copy(row.begin(), row.end(), f);
    }
  });

  // pass along d1
  parallel_for(d0, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<int> v;
    std::vector<double> z, f(d1), g(d1);
    for (std::int64_t i0 = lo; i0 < hi; ++i0)
      for (int i2 = 0; i2 < d2; ++i2) {
        for (int i1 = 0; i1 < d1; ++i1) f[i1] = sq[idx(int(i0), i1, i2)];
        edt_1d(f.data(), g.data(), d1, v, z);
        for (int i1 = 0; i1 < d1; ++i1) sq[idx(int(i0), i1, i2)] = g[i1];
      }
  });

  // pass along d0
  parallel_for(d1, [&](std::int64_t lo, std::int64_t hi) {
    std::vector<int> v;
    std::vector<double> z, f(d0), g(d0);
    for (std::int64_t i1 = lo; i1 < hi; ++i1)
      for (int i2 = 0; i2 < d2; ++i2) {
        for (int i0 = 0; i0 < d0; ++i0) f[i0] = sq[idx(i0, int(i1), i2)];
        edt_1d(f.data(), g.data(), d0, v, z);
        for (int i0 = 0; i0 < d0; ++i0) sq[idx(i0, int(i1), i2)] = g[i0];
      }
  });

  for (std::int64_t i = 0; i < n; ++i)
    result.distances.data[i] = static_cast<float>(std::sqrt(sq[i]));
  return result;
}

Volume weight_map(const Volume& distances, const DwmParams& params) {
  params.validate();
  Volume out(distances.dims, distances.channels, distances.spacing_mm);
  for (std::int64_t i = 0; i < distances.size(); ++i) {
    const float d = distances.data[i];
    if (d < 0.0f || std::isnan(d))
      throw std::invalid_argument("weight_map: distances must be >= 0");
    out.data[i] = std::isinf(d)
                      ? 1.0f
                      : static_cast<float>(1.0 + params.gamma * std::exp(-double(d) / params.sigma));
  }
  return out;
}

Volume compute_dwm(const LabelVolume& labels, const DwmParams& params) {
  return weight_map(distance_transform(surface_voxels(labels)).distances, params);
}

}  // namespace xrec
