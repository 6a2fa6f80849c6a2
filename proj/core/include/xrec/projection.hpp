#pragma once

#include "xrec/grid.hpp"

namespace xrec {

/// The two rectified orthogonal views. AP integrates along d1, LAT along d2;
/// both share the d0 (height) axis as image rows.
enum class ViewAxis { ap, lat };

const char* view_name(ViewAxis axis);

enum class DrrMode { mean, attenuation };

/// Orthographic projection of a single-channel volume.
///   mean:        pixel = average voxel value along the ray
///   attenuation: pixel = 1 - exp(-sum(mu * step_mm)) along the ray
/// AP images are (rows=d0, cols=d2), LAT images (rows=d0, cols=d1);
/// pixel_mm = spacing_mm[0], which must match the in-plane column spacing.
template <typename T>
Image2<T> render_drr(const Grid3<T>& v, ViewAxis axis, DrrMode mode);

/// Mean projection of the per-voxel maximum over the four bone channels
/// (channels 1..4) of a 5-channel prediction.
template <typename T>
Image2<T> project_prediction(const Grid3<T>& prob, ViewAxis axis);

/// Adjoint of project_prediction: routes each pixel gradient uniformly along
/// its ray into the per-voxel argmax bone channel (ties toward the lowest
/// channel index). Accumulates into grad_prob, which must match prob's shape.
template <typename T>
void project_prediction_backward(const Grid3<T>& prob, ViewAxis axis,
                                 const Image2<T>& grad_out, Grid3<T>& grad_prob);

/// Two-channel back-projected volume from a square AP/LAT image pair:
///   channel 0: V[h][y][x] = ap(h, x)   (replicated along d1)
///   channel 1: V[h][y][x] = lat(h, y)  (replicated along d2)
/// Every d0-slice holds one epipolar plane. Spacing is isotropic pixel_mm.
template <typename T>
Grid3<T> build_epipolar_volume(const Image2<T>& ap, const Image2<T>& lat);

}  // namespace xrec
