#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "xrec/grid.hpp"

namespace xrec {

/// Encoder-decoder shape: `levels` resolution levels, two 3x3x3 conv+ReLU
/// blocks per level, strided-conv downsampling, transposed-conv upsampling
/// with channel-concatenated skips, and a 1x1x1 head feeding a per-voxel
/// softmax over num_classes channels.
struct ArchSpec {
  int input_side = 32;
  int in_channels = 2;
  int num_classes = 5;
  int levels = 3;
  int base_channels = 8;

  void validate() const;
  int channels_at(int level) const { return base_channels << level; }
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  std::int64_t size() const {
    std::int64_t n = 1;
    for (int s : shape) n *= s;
    return n;
  }
  static Tensor zeros(std::string name, std::vector<int> shape);
};

struct ParamDef {
  std::string name;
  std::vector<int> shape;
};

/// Deterministic parameter inventory for an architecture; the single source
/// of truth for parameter order in files, Adam state, and gradients.
std::vector<ParamDef> param_defs(const ArchSpec& arch);

template <typename T>
struct Params {
  ArchSpec arch;
  std::vector<Tensor<T>> tensors;

  Tensor<T>& find(const std::string& name);
  const Tensor<T>& find(const std::string& name) const;
  std::int64_t total_size() const;
  void check_finite() const;  // throws naming the first offending tensor
};

using ModelParams = Params<float>;

/// He-style fan-in init for weights (seeded), zero biases.
template <typename T>
Params<T> init_params(const ArchSpec& arch, std::uint64_t seed);

template <typename T>
Params<T> zeros_like(const Params<T>& p);

template <typename To, typename From>
Params<To> params_cast(const Params<From>& p);

/// Model container: JSON manifest (arch + ordered tensor names/shapes)
/// next to a little-endian f32 blob, manifest extension replaced by ".raw".
void save_model(const ModelParams& params, const std::filesystem::path& manifest_path);
ModelParams load_model(const std::filesystem::path& manifest_path);

// ---- primitive layer ops (exposed for tests and gradient checks) ----

/// Cross-correlation plus bias; kernel {cout,cin,k,k,k} with k in {1,3},
/// zero "same" padding for k=3. stride 1 preserves the side, stride 2
/// halves it (even sides only).
template <typename T>
Grid3<T> conv3d_forward(const Grid3<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                        int stride);

template <typename T>
void conv3d_backward(const Grid3<T>& x, const Tensor<T>& kernel, int stride,
                     const Grid3<T>& grad_out, Grid3<T>* grad_x, Tensor<T>* grad_kernel,
                     Tensor<T>* grad_bias);

/// Transposed conv, kernel {cout,cin,2,2,2}, stride 2: doubles the side.
template <typename T>
Grid3<T> conv3d_transpose_forward(const Grid3<T>& x, const Tensor<T>& kernel,
                                  const Tensor<T>& bias);

template <typename T>
void conv3d_transpose_backward(const Grid3<T>& x, const Tensor<T>& kernel,
                               const Grid3<T>& grad_out, Grid3<T>* grad_x,
                               Tensor<T>* grad_kernel, Tensor<T>* grad_bias);

/// Network activation: leaky ReLU, negative slope 0.01. Plain ReLU is
/// irrecoverable under the aggressive Adam schedule this net trains with
/// (whole channels die and stay dead); the leak keeps the backward pass
/// exactly checkable while removing that failure mode.
inline constexpr double kReluLeak = 0.01;

template <typename T>
void relu_forward_inplace(Grid3<T>& a);

/// grad(i) *= out(i) > 0 ? 1 : leak, with out the activation output
/// (out > 0 iff in > 0, so the mask is recoverable from the output).
template <typename T>
void relu_backward_inplace(const Grid3<T>& out, Grid3<T>& grad);

template <typename T>
Grid3<T> softmax_channels(const Grid3<T>& logits);

/// VJP of the per-voxel channel softmax given its output.
template <typename T>
Grid3<T> softmax_backward(const Grid3<T>& prob, const Grid3<T>& grad_prob);

// ---- whole network ----

/// Activation record of one forward pass; everything backward() needs.
template <typename T>
struct Tape {
  Grid3<T> input;
  std::vector<Grid3<T>> enc_a1, enc_a2;  // per level
  std::vector<Grid3<T>> down_out;        // per level 0..L-2
  std::vector<Grid3<T>> up_out;          // per level 0..L-2
  std::vector<Grid3<T>> cat;             // per level 0..L-2, channels [up | skip]
  std::vector<Grid3<T>> dec_a1, dec_a2;  // per level 0..L-2
  Grid3<T> prob;
};

/// Runs the network; returns per-voxel class probabilities (channel sums 1).
/// tape may be null for inference.
template <typename T>
Grid3<T> forward(const ArchSpec& arch, const Params<T>& params, const Grid3<T>& x,
                 Tape<T>* tape);

/// Exact parameter gradients for the composed network given d(loss)/d(prob).
/// Gradients of tensors named in `frozen` are forced to zero.
template <typename T>
Params<T> backward(const ArchSpec& arch, const Params<T>& params, const Tape<T>& tape,
                   const Grid3<T>& grad_prob, const std::set<std::string>* frozen = nullptr);

/// Same walk entered below the softmax, for losses that supply d(loss)/d(logits)
/// directly (the fused softmax + cross-entropy form stays finite even where
/// float probabilities underflow and the per-probability gradient cannot).
template <typename T>
Params<T> backward_from_logits(const ArchSpec& arch, const Params<T>& params,
                               const Tape<T>& tape, const Grid3<T>& grad_logits,
                               const std::set<std::string>* frozen = nullptr);

// ---- optimization ----

struct LrSchedule {
  double initial = 1e-2;
  double decay_factor = 10.0;
  int decay_every_epochs = 10;

  double at_epoch(int epoch) const;
};

template <typename T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;
  LrSchedule schedule;
  std::vector<Tensor<T>> m, v;  // aligned with the parameter order

  static AdamState init(const Params<T>& params);
};

/// Standard bias-corrected Adam update. Throws on non-finite gradients,
/// naming the parameter.
template <typename T>
void adam_step(Params<T>& params, const Params<T>& grads, AdamState<T>& state, double lr);

}  // namespace xrec
