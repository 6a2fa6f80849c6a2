#pragma once

#include "xrec/grid.hpp"

namespace xrec {

template <typename T>
struct GradientPair {
  Image2<T> gx;  // finite differences along columns
  Image2<T> gy;  // finite differences along rows
};

/// Central differences in the interior, one-sided at the borders.
template <typename T>
GradientPair<T> image_gradients(const Image2<T>& img);

/// Normalized gradient cross correlation in [-1, 1]: the mean of the cosine
/// similarities of the two images' gx and gy fields. A gradient field with
/// norm below 1e-8 contributes 0 to its term. Optionally returns d/d(i1).
template <typename T>
T ngcc(const Image2<T>& i1, const Image2<T>& i2, Image2<T>* grad_i1 = nullptr);

/// As ngcc but every gradient field is mean-subtracted first, which adds
/// invariance to spatially constant gradients (linear ramps).
template <typename T>
T zngcc(const Image2<T>& i1, const Image2<T>& i2);

/// -(1/N) sum_i sum_k dwm(i) q_k(i) log p_k(i), q one-hot from labels,
/// p clamped at 1e-12 before the log. Optionally returns d/d(prob).
template <typename T>
T weighted_cross_entropy(const Grid3<T>& prob, const LabelVolume& labels,
                         const Grid3<T>& dwm, Grid3<T>* grad_prob = nullptr);

/// Fused gradient of weighted_cross_entropy(softmax(z), ...) with respect to
/// the logits z: dwm(i) * (p_k(i) - q_k(i)) / N. Identical to composing the
/// per-probability gradient with the softmax VJP wherever the log clamp is
/// inactive, and still finite where 32-bit probabilities underflow to 0.
template <typename T>
Grid3<T> weighted_ce_logit_grad(const Grid3<T>& prob, const LabelVolume& labels,
                                const Grid3<T>& dwm);

/// 1 - (ngcc(i_lat, drr_lat) + ngcc(i_ap, drr_ap)) / 2 where the DRRs are
/// mean projections of the bone-channel maximum of prob. In [0, 2].
/// grad_prob, when given, is accumulated into (callers zero it first).
template <typename T>
T reconstruction_loss(const Grid3<T>& prob, const Image2<T>& i_ap, const Image2<T>& i_lat,
                      Grid3<T>* grad_prob = nullptr);

template <typename T>
struct LossParts {
  T total = 0, ce = 0, reconst = 0;
};

/// (reconstruction + cross-entropy) / 2, gradient included on request.
template <typename T>
LossParts<T> total_loss(const Grid3<T>& prob, const LabelVolume& labels, const Grid3<T>& dwm,
                        const Image2<T>& i_ap, const Image2<T>& i_lat,
                        Grid3<T>* grad_prob = nullptr);

/// Style-transfer content preservation score for two image pairs:
/// 1 - (zngcc(ia, ib) + zngcc(ic, id)) / 2. Standalone metric.
template <typename T>
T content_loss(const Image2<T>& ia, const Image2<T>& ib, const Image2<T>& ic,
               const Image2<T>& id);

}  // namespace xrec
