#include "xrec/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "xrec/rng.hpp"

namespace xrec {

void PhantomSpec::validate() const {
  if (size < 16) throw std::invalid_argument("PhantomSpec: size must be >= 16");
  if (!(bone_intensity_lo >= 0.0 && bone_intensity_hi <= 1.0 &&
        bone_intensity_lo <= bone_intensity_hi))
    throw std::invalid_argument("PhantomSpec: bone intensity range must satisfy 0 <= lo <= hi <= 1");
  if (!(soft_tissue_intensity >= 0.0 && soft_tissue_intensity < bone_intensity_lo))
    throw std::invalid_argument(
        "PhantomSpec: soft_tissue_intensity must be in [0, bone_intensity_lo)");
}

namespace {

struct Vec {
  double p0, p1, p2;
};

double sq(double x) { return x * x; }

// squared distance from point q to segment a-b
double segment_dist2(const Vec& q, const Vec& a, const Vec& b) {
  const double v0 = b.p0 - a.p0, v1 = b.p1 - a.p1, v2 = b.p2 - a.p2;
  const double w0 = q.p0 - a.p0, w1 = q.p1 - a.p1, w2 = q.p2 - a.p2;
  const double vv = v0 * v0 + v1 * v1 + v2 * v2;
  double t = vv > 0.0 ? (w0 * v0 + w1 * v1 + w2 * v2) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return sq(w0 - t * v0) + sq(w1 - t * v1) + sq(w2 - t * v2);
}

struct Capsule {
  Vec a, b;
  double r;
  bool contains(const Vec& q) const { return segment_dist2(q, a, b) <= r * r; }
};

struct Ellipsoid {
  Vec c, radii;
  bool contains(const Vec& q) const {
    return sq((q.p0 - c.p0) / radii.p0) + sq((q.p1 - c.p1) / radii.p1) +
               sq((q.p2 - c.p2) / radii.p2) <=
           1.0;
  }
};

struct Sphere {
  Vec c;
  double r;
  bool contains(const Vec& q) const {
    return sq(q.p0 - c.p0) + sq(q.p1 - c.p1) + sq(q.p2 - c.p2) <= r * r;
  }
};

struct BonePose {
  Vec offset;    // voxel units
  double scale;  // radius multiplier
  double intensity;
};

}  // namespace

PhantomCase generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int s = spec.size;
  const double S = static_cast<double>(s);
  Rng rng(spec.seed);

  // fixed draw order: femur, patella, tibia, fibula
  std::array<BonePose, 4> pose;
  for (auto& p : pose) {
    p.intensity = rng.uniform(spec.bone_intensity_lo, spec.bone_intensity_hi);
    const double j = spec.position_jitter * S;
    p.offset = {rng.uniform(-j, j), rng.uniform(-j, j), rng.uniform(-j, j)};
    p.scale = rng.uniform(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
  }

  const auto at = [&](double u0, double u1, double u2, const BonePose& p) -> Vec {
    return {u0 * S + p.offset.p0, u1 * S + p.offset.p1, u2 * S + p.offset.p2};
  };
  const auto rad = [&](double frac, const BonePose& p, double floor_vox = 0.0) {
    return std::max(frac * S * p.scale, floor_vox);
  };

  const BonePose& femur = pose[0];
  const BonePose& patella = pose[1];
  const BonePose& tibia = pose[2];
  const BonePose& fibula = pose[3];

  const Capsule femur_shaft{at(0.06, 0.52, 0.50, femur), at(0.40, 0.52, 0.50, femur),
                            rad(0.140, femur)};
  const Sphere condyle_med{at(0.46, 0.55, 0.40, femur), rad(0.120, femur)};
  const Sphere condyle_lat{at(0.46, 0.55, 0.60, femur), rad(0.120, femur)};

  const Ellipsoid patella_body{
      at(0.44, 0.22, 0.50, patella),
      {rad(0.110, patella), rad(0.085, patella), rad(0.105, patella)}};

  const Capsule tibia_shaft{at(0.66, 0.50, 0.46, tibia), at(0.94, 0.50, 0.46, tibia),
                            rad(0.125, tibia)};
  const Ellipsoid tibia_plateau{
      at(0.63, 0.50, 0.46, tibia),
      {rad(0.060, tibia), rad(0.140, tibia), rad(0.160, tibia)}};

  const Capsule fibula_shaft{at(0.66, 0.58, 0.76, fibula), at(0.94, 0.58, 0.76, fibula),
                             rad(0.060, fibula, 0.95)};

  const Ellipsoid soft{{0.50 * S, 0.50 * S, 0.50 * S}, {0.49 * S, 0.42 * S, 0.42 * S}};

  PhantomCase out{Volume({s, s, s}, 1, {1.0, 1.0, 1.0}), LabelVolume({s, s, s}, {1.0, 1.0, 1.0})};

  for (int i0 = 0; i0 < s; ++i0)
    for (int i1 = 0; i1 < s; ++i1)
      for (int i2 = 0; i2 < s; ++i2) {
        const Vec q{double(i0), double(i1), double(i2)};
        std::uint8_t label = 0;
        if (femur_shaft.contains(q) || condyle_med.contains(q) || condyle_lat.contains(q))
          label = 1;
        else if (patella_body.contains(q))
          label = 2;
        else if (tibia_shaft.contains(q) || tibia_plateau.contains(q))
          label = 3;
        else if (fibula_shaft.contains(q))
          label = 4;
        out.labels.at(i0, i1, i2) = label;

        double v = 0.0;
        if (label != 0)
          v = pose[label - 1].intensity;
        else if (soft.contains(q))
          v = spec.soft_tissue_intensity;
        out.intensity.at(0, i0, i1, i2) = static_cast<float>(v);
      }

  // cortical rim: boost the 1-voxel boundary shell of every bone region
  const auto& lb = out.labels;
  for (int i0 = 0; i0 < s; ++i0)
    for (int i1 = 0; i1 < s; ++i1)
      for (int i2 = 0; i2 < s; ++i2) {
        const std::uint8_t v = lb.at(i0, i1, i2);
        if (v == 0) continue;
        bool boundary = i0 == 0 || i0 == s - 1 || i1 == 0 || i1 == s - 1 || i2 == 0 ||
                        i2 == s - 1;
        if (!boundary)
          boundary = lb.at(i0 - 1, i1, i2) != v || lb.at(i0 + 1, i1, i2) != v ||
                     lb.at(i0, i1 - 1, i2) != v || lb.at(i0, i1 + 1, i2) != v ||
                     lb.at(i0, i1, i2 - 1) != v || lb.at(i0, i1, i2 + 1) != v;
        if (boundary)
          out.intensity.at(0, i0, i1, i2) += static_cast<float>(spec.cortical_rim_boost);
      }

  return out;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 m{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) m[i][j] += a[i][k] * b[k][j];
  return m;
}

// rotation about the given axis in the (d0,d1,d2) right-handed frame
Mat3 axis_rotation(int axis, double deg) {
  const double rad = deg * (3.141592653589793 / 180.0);
  const double c = std::cos(rad), s = std::sin(rad);
  const int u = (axis + 1) % 3, v = (axis + 2) % 3;
  Mat3 m{};
  m[axis][axis] = 1.0;
  m[u][u] = c;
  m[u][v] = -s;
  m[v][u] = s;
  m[v][v] = c;
  return m;
}

// forward map p_out = R (p_in - c) + c with R = R2 * R1 * R0
Mat3 euler_012(const std::array<double, 3>& deg) {
  for (double a : deg)
    if (std::abs(a) > 45.0)
      throw std::invalid_argument("rotate: |angle| must be <= 45 degrees");
  return matmul(axis_rotation(2, deg[2]),
                matmul(axis_rotation(1, deg[1]), axis_rotation(0, deg[0])));
}

Vec apply_transposed(const Mat3& m, const Vec& p) {
  return {m[0][0] * p.p0 + m[1][0] * p.p1 + m[2][0] * p.p2,
          m[0][1] * p.p0 + m[1][1] * p.p1 + m[2][1] * p.p2,
          m[0][2] * p.p0 + m[1][2] * p.p1 + m[2][2] * p.p2};
}

}  // namespace

Volume rotate_volume(const Volume& v, std::array<double, 3> angles_deg, Interp interp) {
  if (v.channels != 1)
    throw std::invalid_argument("rotate_volume: expected single-channel volume");
  const Mat3 rot = euler_012(angles_deg);
  const auto [d0, d1, d2] = v.dims;
  const Vec c{(d0 - 1) / 2.0, (d1 - 1) / 2.0, (d2 - 1) / 2.0};
  const float fill = *std::min_element(v.data.begin(), v.data.end());

  Volume out(v.dims, 1, v.spacing_mm);
  for (int i0 = 0; i0 < d0; ++i0)
    for (int i1 = 0; i1 < d1; ++i1)
      for (int i2 = 0; i2 < d2; ++i2) {
        // inverse mapping: source = c + R^T (out - c)
        const Vec p = apply_transposed(rot, {i0 - c.p0, i1 - c.p1, i2 - c.p2});
        const double s0 = p.p0 + c.p0, s1 = p.p1 + c.p1, s2 = p.p2 + c.p2;
        float value;
        if (interp == Interp::nearest) {
          const int n0 = static_cast<int>(std::lround(s0));
          const int n1 = static_cast<int>(std::lround(s1));
          const int n2 = static_cast<int>(std::lround(s2));
          value = v.in_bounds(n0, n1, n2) ? v.at(0, n0, n1, n2) : fill;
        } else {
          const int f0 = static_cast<int>(std::floor(s0));
          const int f1 = static_cast<int>(std::floor(s1));
          const int f2 = static_cast<int>(std::floor(s2));
          const double t0 = s0 - f0, t1 = s1 - f1, t2 = s2 - f2;
          double acc = 0.0;
          for (int b0 = 0; b0 < 2; ++b0)
            for (int b1 = 0; b1 < 2; ++b1)
              for (int b2 = 0; b2 < 2; ++b2) {
                const double w = (b0 ? t0 : 1.0 - t0) * (b1 ? t1 : 1.0 - t1) *
                                 (b2 ? t2 : 1.0 - t2);
                const double sample = v.in_bounds(f0 + b0, f1 + b1, f2 + b2)
                                          ? v.at(0, f0 + b0, f1 + b1, f2 + b2)
                                          : fill;
                acc += w * sample;
              }
          value = static_cast<float>(acc);
        }
        out.at(0, i0, i1, i2) = value;
      }
  return out;
}

LabelVolume rotate_labels(const LabelVolume& labels, std::array<double, 3> angles_deg) {
  const Mat3 rot = euler_012(angles_deg);
  const auto [d0, d1, d2] = labels.dims;
  const Vec c{(d0 - 1) / 2.0, (d1 - 1) / 2.0, (d2 - 1) / 2.0};

  LabelVolume out(labels.dims, labels.spacing_mm);
  for (int i0 = 0; i0 < d0; ++i0)
    for (int i1 = 0; i1 < d1; ++i1)
      for (int i2 = 0; i2 < d2; ++i2) {
        const Vec p = apply_transposed(rot, {i0 - c.p0, i1 - c.p1, i2 - c.p2});
        const int n0 = std::clamp(static_cast<int>(std::lround(p.p0 + c.p0)), 0, d0 - 1);
        const int n1 = std::clamp(static_cast<int>(std::lround(p.p1 + c.p1)), 0, d1 - 1);
        const int n2 = std::clamp(static_cast<int>(std::lround(p.p2 + c.p2)), 0, d2 - 1);
        out.at(i0, i1, i2) = labels.at(n0, n1, n2);
      }
  return out;
}

AugmentedCase augment_case(const Volume& intensity, const LabelVolume& labels,
                           std::uint64_t seed) {
  Rng rng(seed);
  const std::array<double, 3> angles{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0),
                                     rng.uniform(-5.0, 5.0)};
  return {rotate_volume(intensity, angles, Interp::trilinear),
          rotate_labels(labels, angles), angles};
}

}  // namespace xrec
