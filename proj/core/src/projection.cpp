#include "xrec/projection.hpp"

#include <cmath>
#include <stdexcept>

namespace xrec {

const char* view_name(ViewAxis axis) { return axis == ViewAxis::ap ? "ap" : "lat"; }

namespace {

template <typename T>
void check_in_plane_spacing(const Grid3<T>& v, ViewAxis axis) {
  const double col_sp = axis == ViewAxis::ap ? v.spacing_mm[2] : v.spacing_mm[1];
  if (v.spacing_mm[0] != col_sp)
    throw std::invalid_argument("render_drr: in-plane spacing must match spacing_mm[0]");
}

}  // namespace

template <typename T>
Image2<T> render_drr(const Grid3<T>& v, ViewAxis axis, DrrMode mode) {
  if (v.channels != 1)
    throw std::invalid_argument("render_drr: expected single-channel volume, got " +
                                std::to_string(v.channels));
  check_in_plane_spacing(v, axis);

  const auto [d0, d1, d2] = v.dims;
  const int cols = axis == ViewAxis::ap ? d2 : d1;
  const int ray_len = axis == ViewAxis::ap ? d1 : d2;
  const double step_mm = axis == ViewAxis::ap ? v.spacing_mm[1] : v.spacing_mm[2];

  Image2<T> img(d0, cols, v.spacing_mm[0]);
  for (int h = 0; h < d0; ++h) {
    for (int c = 0; c < cols; ++c) {
      // fixed summation order along the ray: ascending integration axis
      double acc = 0.0;
      if (axis == ViewAxis::ap) {
        for (int y = 0; y < d1; ++y) acc += v.at(0, h, y, c);
      } else {
        for (int x = 0; x < d2; ++x) acc += v.at(0, h, c, x);
      }
      if (mode == DrrMode::mean)
        img.at(h, c) = static_cast<T>(acc / ray_len);
      else
        img.at(h, c) = static_cast<T>(1.0 - std::exp(-acc * step_mm));
    }
  }
  return img;
}

namespace {

template <typename T>
void bone_max_argmax(const Grid3<T>& prob, std::vector<T>& bone_max,
                     std::vector<std::uint8_t>* bone_arg) {
  const std::int64_t n = prob.dims.voxels();
  bone_max.resize(n);
  if (bone_arg) bone_arg->resize(n);
  for (std::int64_t i = 0; i < n; ++i) {
    T best = prob.data[n + i];  // channel 1
    std::uint8_t arg = 1;
    for (int c = 2; c < 5; ++c) {
      const T v = prob.data[static_cast<std::int64_t>(c) * n + i];
      if (v > best) {  // strict: ties keep the lowest channel
        best = v;
        arg = static_cast<std::uint8_t>(c);
      }
    }
    bone_max[i] = best;
    if (bone_arg) (*bone_arg)[i] = arg;
  }
}

}  // namespace

template <typename T>
Image2<T> project_prediction(const Grid3<T>& prob, ViewAxis axis) {
  if (prob.channels != 5)
    throw std::invalid_argument("project_prediction: expected 5 channels, got " +
                                std::to_string(prob.channels));
  std::vector<T> bone_max;
  bone_max_argmax(prob, bone_max, nullptr);
  Grid3<T> bones(prob.dims, 1, prob.spacing_mm);
  bones.data = std::move(bone_max);
  return render_drr(bones, axis, DrrMode::mean);
}

template <typename T>
void project_prediction_backward(const Grid3<T>& prob, ViewAxis axis,
                                 const Image2<T>& grad_out, Grid3<T>& grad_prob) {
  if (prob.channels != 5)
    throw std::invalid_argument("project_prediction_backward: expected 5 channels");
  if (grad_prob.dims != prob.dims || grad_prob.channels != prob.channels)
    throw std::invalid_argument("project_prediction_backward: grad_prob shape mismatch");

  std::vector<T> bone_max;
  std::vector<std::uint8_t> arg;
  bone_max_argmax(prob, bone_max, &arg);

  const auto [d0, d1, d2] = prob.dims;
  const std::int64_t n = prob.dims.voxels();
  const int ray_len = axis == ViewAxis::ap ? d1 : d2;
  const T inv_len = T(1) / static_cast<T>(ray_len);

  for (int h = 0; h < d0; ++h)
    for (int y = 0; y < d1; ++y)
      for (int x = 0; x < d2; ++x) {
        const std::int64_t i = (static_cast<std::int64_t>(h) * d1 + y) * d2 + x;
        const T g = (axis == ViewAxis::ap ? grad_out.at(h, x) : grad_out.at(h, y)) * inv_len;
        grad_prob.data[static_cast<std::int64_t>(arg[i]) * n + i] += g;
      }
}

template <typename T>
Grid3<T> build_epipolar_volume(const Image2<T>& ap, const Image2<T>& lat) {
  if (ap.rows != ap.cols || lat.rows != lat.cols)
    throw std::invalid_argument("build_epipolar_volume: images must be square");
  if (ap.rows != lat.rows)
    throw std::invalid_argument("build_epipolar_volume: image sides differ: " +
                                std::to_string(ap.rows) + " vs " + std::to_string(lat.rows));
  if (ap.pixel_mm != lat.pixel_mm)
    throw std::invalid_argument("build_epipolar_volume: pixel_mm differs between views");

  const int s = ap.rows;
  Grid3<T> v({s, s, s}, 2, {ap.pixel_mm, ap.pixel_mm, ap.pixel_mm});
  T* ch0 = v.channel_ptr(0);
  T* ch1 = v.channel_ptr(1);
  for (int h = 0; h < s; ++h)
    for (int y = 0; y < s; ++y) {
      const std::int64_t row = (static_cast<std::int64_t>(h) * s + y) * s;
      const T lat_v = lat.at(h, y);
      for (int x = 0; x < s; ++x) {
        ch0[row + x] = ap.at(h, x);
        ch1[row + x] = lat_v;
      }
    }
  return v;
}

template Image2<float> render_drr(const Grid3<float>&, ViewAxis, DrrMode);
template Image2<double> render_drr(const Grid3<double>&, ViewAxis, DrrMode);
template Image2<float> project_prediction(const Grid3<float>&, ViewAxis);
template Image2<double> project_prediction(const Grid3<double>&, ViewAxis);
template void project_prediction_backward(const Grid3<float>&, ViewAxis, const Image2<float>&,
                                           Grid3<float>&);
template void project_prediction_backward(const Grid3<double>&, ViewAxis, const Image2<double>&,
                                           Grid3<double>&);
template Grid3<float> build_epipolar_volume(const Image2<float>&, const Image2<float>&);
template Grid3<double> build_epipolar_volume(const Image2<double>&, const Image2<double>&);

}  // namespace xrec
