#include "xrec/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "xrec/projection.hpp"

namespace xrec {

namespace {

constexpr double kNormEps = 1e-8;
constexpr double kLogClamp = 1e-12;

template <typename T>
void check_same_shape(const Image2<T>& a, const Image2<T>& b, const char* where) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw std::invalid_argument(std::string(where) + ": image shape mismatch");
}

}  // namespace

template <typename T>
GradientPair<T> image_gradients(const Image2<T>& img) {
  if (img.rows < 2 || img.cols < 2)
    throw std::invalid_argument("image_gradients: need at least 2 rows and 2 cols");
  GradientPair<T> g{Image2<T>(img.rows, img.cols, img.pixel_mm),
                    Image2<T>(img.rows, img.cols, img.pixel_mm)};
  const int R = img.rows, C = img.cols;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      if (c == 0)
        g.gx.at(r, c) = img.at(r, 1) - img.at(r, 0);
      else if (c == C - 1)
        g.gx.at(r, c) = img.at(r, C - 1) - img.at(r, C - 2);
      else
        g.gx.at(r, c) = (img.at(r, c + 1) - img.at(r, c - 1)) / T(2);

      if (r == 0)
        g.gy.at(r, c) = img.at(1, c) - img.at(0, c);
      else if (r == R - 1)
        g.gy.at(r, c) = img.at(R - 1, c) - img.at(R - 2, c);
      else
        g.gy.at(r, c) = (img.at(r + 1, c) - img.at(r - 1, c)) / T(2);
    }
  return g;
}

namespace {

// adjoints of the finite-difference stencils above, accumulated into out
template <typename T>
void adjoint_gx(const Image2<T>& u, Image2<T>& out) {
  const int R = u.rows, C = u.cols;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const T v = u.at(r, c);
      if (v == T(0)) continue;
      if (c == 0) {
        out.at(r, 1) += v;
        out.at(r, 0) -= v;
      } else if (c == C - 1) {
        out.at(r, C - 1) += v;
        out.at(r, C - 2) -= v;
      } else {
        out.at(r, c + 1) += v / T(2);
        out.at(r, c - 1) -= v / T(2);
      }
    }
}

template <typename T>
void adjoint_gy(const Image2<T>& u, Image2<T>& out) {
  const int R = u.rows, C = u.cols;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const T v = u.at(r, c);
      if (v == T(0)) continue;
      if (r == 0) {
        out.at(1, c) += v;
        out.at(0, c) -= v;
      } else if (r == R - 1) {
        out.at(R - 1, c) += v;
        out.at(R - 2, c) -= v;
      } else {
        out.at(r + 1, c) += v / T(2);
        out.at(r - 1, c) -= v / T(2);
      }
    }
}

// one cosine-similarity term s/(|a||b|); d/d(a) written to grad_a when given
template <typename T>
double cosine_term(const Image2<T>& a, const Image2<T>& b, Image2<T>* grad_a) {
  double s = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double av = a.data[i], bv = b.data[i];
    s += av * bv;
    na2 += av * av;
    nb2 += bv * bv;
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (grad_a) {
    std::fill(grad_a->data.begin(), grad_a->data.end(), T(0));
    if (na > kNormEps && nb > kNormEps) {
      const double c1 = 1.0 / (na * nb);
      const double c2 = s / (na2 * na * nb);
      for (std::int64_t i = 0; i < a.size(); ++i)
        grad_a->data[i] = static_cast<T>(c1 * b.data[i] - c2 * a.data[i]);
    }
  }
  if (na <= kNormEps || nb <= kNormEps) return 0.0;
  return s / (na * nb);
}

template <typename T>
void subtract_mean(Image2<T>& img) {
  double m = 0.0;
  for (T v : img.data) m += v;
  m /= static_cast<double>(img.size());
  for (T& v : img.data) v = static_cast<T>(v - m);
}

}  // namespace

template <typename T>
T ngcc(const Image2<T>& i1, const Image2<T>& i2, Image2<T>* grad_i1) {
  check_same_shape(i1, i2, "ngcc");
  const GradientPair<T> g1 = image_gradients(i1);
  const GradientPair<T> g2 = image_gradients(i2);

  Image2<T> dgx, dgy;
  if (grad_i1) {
    dgx = Image2<T>(i1.rows, i1.cols, i1.pixel_mm);
    dgy = Image2<T>(i1.rows, i1.cols, i1.pixel_mm);
  }
  const double tx = cosine_term(g1.gx, g2.gx, grad_i1 ? &dgx : nullptr);
  const double ty = cosine_term(g1.gy, g2.gy, grad_i1 ? &dgy : nullptr);

  if (grad_i1) {
    *grad_i1 = Image2<T>(i1.rows, i1.cols, i1.pixel_mm);
    for (T& v : dgx.data) v /= T(2);
    for (T& v : dgy.data) v /= T(2);
    adjoint_gx(dgx, *grad_i1);
    adjoint_gy(dgy, *grad_i1);
  }
  return static_cast<T>(0.5 * (tx + ty));
}

template <typename T>
T zngcc(const Image2<T>& i1, const Image2<T>& i2) {
  check_same_shape(i1, i2, "zngcc");
  GradientPair<T> g1 = image_gradients(i1);
  GradientPair<T> g2 = image_gradients(i2);
  subtract_mean(g1.gx);
  subtract_mean(g1.gy);
  subtract_mean(g2.gx);
  subtract_mean(g2.gy);
  const double tx = cosine_term<T>(g1.gx, g2.gx, nullptr);
  const double ty = cosine_term<T>(g1.gy, g2.gy, nullptr);
  return static_cast<T>(0.5 * (tx + ty));
}

template <typename T>
T weighted_cross_entropy(const Grid3<T>& prob, const LabelVolume& labels,
                         const Grid3<T>& dwm, Grid3<T>* grad_prob) {
  if (prob.dims != labels.dims)
    throw std::invalid_argument("weighted_cross_entropy: prob/labels dims mismatch");
  if (dwm.dims != labels.dims || dwm.channels != 1)
    throw std::invalid_argument("weighted_cross_entropy: dwm must be single-channel, same dims");
  labels.validate_classes(prob.channels);

  const std::int64_t n = labels.dims.voxels();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad_prob) {
    *grad_prob = Grid3<T>(prob.dims, prob.channels, prob.spacing_mm);
  }
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t k = labels.data[i];
    const double w = dwm.data[i];
    const double p = prob.data[k * n + i];
    const double pc = std::max(p, kLogClamp);
    loss -= w * std::log(pc);
    if (grad_prob && p > kLogClamp)
      grad_prob->data[k * n + i] = static_cast<T>(-w * inv_n / pc);
  }
  return static_cast<T>(loss * inv_n);
}

template <typename T>
Grid3<T> weighted_ce_logit_grad(const Grid3<T>& prob, const LabelVolume& labels,
                                const Grid3<T>& dwm) {
  if (prob.dims != labels.dims || dwm.dims != labels.dims || dwm.channels != 1)
    throw std::invalid_argument("weighted_ce_logit_grad: shape mismatch");
  labels.validate_classes(prob.channels);
  const std::int64_t n = labels.dims.voxels();
  const double inv_n = 1.0 / static_cast<double>(n);
  Grid3<T> grad(prob.dims, prob.channels, prob.spacing_mm);
  for (std::int64_t i = 0; i < n; ++i) {
    const double w = dwm.data[i] * inv_n;
    for (int c = 0; c < prob.channels; ++c)
      grad.data[c * n + i] = static_cast<T>(w * prob.data[c * n + i]);
    grad.data[static_cast<std::int64_t>(labels.data[i]) * n + i] -= static_cast<T>(w);
  }
  return grad;
}

template <typename T>
T reconstruction_loss(const Grid3<T>& prob, const Image2<T>& i_ap, const Image2<T>& i_lat,
                      Grid3<T>* grad_prob) {
  if (prob.channels != 5)
    throw std::invalid_argument("reconstruction_loss: expected 5-channel prediction");
  if (i_ap.rows != prob.dims.d0 || i_ap.cols != prob.dims.d2)
    throw std::invalid_argument("reconstruction_loss: AP image shape mismatch");
  if (i_lat.rows != prob.dims.d0 || i_lat.cols != prob.dims.d1)
    throw std::invalid_argument("reconstruction_loss: LAT image shape mismatch");

  const Image2<T> drr_ap = project_prediction(prob, ViewAxis::ap);
  const Image2<T> drr_lat = project_prediction(prob, ViewAxis::lat);

  if (!grad_prob) {
    const double v = 0.5 * (ngcc<T>(i_lat, drr_lat) + ngcc<T>(i_ap, drr_ap));
    return static_cast<T>(1.0 - v);
  }

  // ngcc is symmetric; evaluate with the DRR first to get d/d(drr)
  Image2<T> g_ap, g_lat;
  const double v_ap = ngcc<T>(drr_ap, i_ap, &g_ap);
  const double v_lat = ngcc<T>(drr_lat, i_lat, &g_lat);
  for (T& v : g_ap.data) v *= T(-0.5);
  for (T& v : g_lat.data) v *= T(-0.5);
  project_prediction_backward(prob, ViewAxis::ap, g_ap, *grad_prob);
  project_prediction_backward(prob, ViewAxis::lat, g_lat, *grad_prob);
  return static_cast<T>(1.0 - 0.5 * (v_lat + v_ap));
}

template <typename T>
LossParts<T> total_loss(const Grid3<T>& prob, const LabelVolume& labels, const Grid3<T>& dwm,
                        const Image2<T>& i_ap, const Image2<T>& i_lat, Grid3<T>* grad_prob) {
  LossParts<T> parts;
  Grid3<T> g_ce, g_rec;
  parts.ce = weighted_cross_entropy(prob, labels, dwm, grad_prob ? &g_ce : nullptr);
  if (grad_prob) g_rec = Grid3<T>(prob.dims, prob.channels, prob.spacing_mm);
  parts.reconst = reconstruction_loss(prob, i_ap, i_lat, grad_prob ? &g_rec : nullptr);
  parts.total = static_cast<T>(0.5 * (double(parts.ce) + double(parts.reconst)));
  if (grad_prob) {
    *grad_prob = Grid3<T>(prob.dims, prob.channels, prob.spacing_mm);
    for (std::int64_t i = 0; i < grad_prob->size(); ++i)
      grad_prob->data[i] = static_cast<T>(0.5 * (double(g_ce.data[i]) + double(g_rec.data[i])));
  }
  return parts;
}

template <typename T>
T content_loss(const Image2<T>& ia, const Image2<T>& ib, const Image2<T>& ic,
               const Image2<T>& id) {
  return static_cast<T>(1.0 - 0.5 * (double(zngcc(ia, ib)) + double(zngcc(ic, id))));
}

#define XREC_INSTANTIATE_LOSSES(T)                                                        \
  template GradientPair<T> image_gradients(const Image2<T>&);                            \
  template T ngcc(const Image2<T>&, const Image2<T>&, Image2<T>*);                       \
  template T zngcc(const Image2<T>&, const Image2<T>&);                                  \
  template T weighted_cross_entropy(const Grid3<T>&, const LabelVolume&, const Grid3<T>&, \
                                    Grid3<T>*);                                          \
  template Grid3<T> weighted_ce_logit_grad(const Grid3<T>&, const LabelVolume&,          \
                                           const Grid3<T>&);                             \
  template T reconstruction_loss(const Grid3<T>&, const Image2<T>&, const Image2<T>&,    \
                                 Grid3<T>*);                                             \
  template LossParts<T> total_loss(const Grid3<T>&, const LabelVolume&, const Grid3<T>&, \
                                   const Image2<T>&, const Image2<T>&, Grid3<T>*);       \
  template T content_loss(const Image2<T>&, const Image2<T>&, const Image2<T>&,          \
                          const Image2<T>&);

XREC_INSTANTIATE_LOSSES(float)
XREC_INSTANTIATE_LOSSES(double)

#undef XREC_INSTANTIATE_LOSSES

}  // namespace xrec
