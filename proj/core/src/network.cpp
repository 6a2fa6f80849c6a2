#include "xrec/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "xrec/io.hpp"
#include "xrec/parallel.hpp"
#include "xrec/rng.hpp"

namespace xrec {

void ArchSpec::validate() const {
  if (levels < 2) throw std::invalid_argument("ArchSpec: levels must be >= 2");
  if (base_channels < 2) throw std::invalid_argument("ArchSpec: base_channels must be >= 2");
  if (in_channels < 1 || num_classes < 2)
    throw std::invalid_argument("ArchSpec: bad channel counts");
  const int down = 1 << (levels - 1);
  if (input_side < down * 2 || input_side % down != 0)
    throw std::invalid_argument("ArchSpec: input_side must be a multiple of 2^(levels-1)");
}

std::vector<ParamDef> param_defs(const ArchSpec& arch) {
  arch.validate();
  std::vector<ParamDef> defs;
  const auto conv = [&](const std::string& name, int cin, int cout, int k) {
    defs.push_back({name + ".weight", {cout, cin, k, k, k}});
    defs.push_back({name + ".bias", {cout}});
  };
  const int L = arch.levels;
  for (int l = 0; l < L; ++l) {
    const int c = arch.channels_at(l);
    conv("enc" + std::to_string(l) + ".conv1", l == 0 ? arch.in_channels : c, c, 3);
    conv("enc" + std::to_string(l) + ".conv2", c, c, 3);
    if (l < L - 1) conv("down" + std::to_string(l), c, arch.channels_at(l + 1), 3);
  }
  for (int l = L - 2; l >= 0; --l) {
    const int c = arch.channels_at(l);
    conv("up" + std::to_string(l), arch.channels_at(l + 1), c, 2);
    conv("dec" + std::to_string(l) + ".conv1", 2 * c, c, 3);
    conv("dec" + std::to_string(l) + ".conv2", c, c, 3);
  }
  conv("head", arch.base_channels, arch.num_classes, 1);
  return defs;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(std::string name, std::vector<int> shape) {
  Tensor<T> t;
  t.name = std::move(name);
  t.shape = std::move(shape);
  std::int64_t n = 1;
  for (int s : t.shape) n *= s;
  t.data.assign(n, T(0));
  return t;
}

template <typename T>
Tensor<T>& Params<T>::find(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t;
  throw std::invalid_argument("Params: no tensor named " + name);
}

template <typename T>
const Tensor<T>& Params<T>::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw std::invalid_argument("Params: no tensor named " + name);
}

template <typename T>
std::int64_t Params<T>::total_size() const {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
void Params<T>::check_finite() const {
  for (const auto& t : tensors)
    for (T v : t.data)
      if (!std::isfinite(double(v)))
        throw std::runtime_error("Params: non-finite value in tensor " + t.name);
}

template <typename T>
Params<T> init_params(const ArchSpec& arch, std::uint64_t seed) {
  Params<T> p;
  p.arch = arch;
  Rng rng(seed);
  for (const auto& def : param_defs(arch)) {
    Tensor<T> t = Tensor<T>::zeros(def.name, def.shape);
    if (def.shape.size() == 5) {
      std::int64_t fan_in = def.shape[1];
      for (std::size_t i = 2; i < def.shape.size(); ++i) fan_in *= def.shape[i];
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (T& v : t.data) v = static_cast<T>(rng.normal() * std_dev);
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <typename T>
Params<T> zeros_like(const Params<T>& p) {
  Params<T> out;
  out.arch = p.arch;
  out.tensors.reserve(p.tensors.size());
  for (const auto& t : p.tensors) out.tensors.push_back(Tensor<T>::zeros(t.name, t.shape));
  return out;
}

template <typename To, typename From>
Params<To> params_cast(const Params<From>& p) {
  Params<To> out;
  out.arch = p.arch;
  out.tensors.reserve(p.tensors.size());
  for (const auto& t : p.tensors) {
    Tensor<To> nt = Tensor<To>::zeros(t.name, t.shape);
    for (std::int64_t i = 0; i < t.size(); ++i) nt.data[i] = static_cast<To>(t.data[i]);
    out.tensors.push_back(std::move(nt));
  }
  return out;
}

void save_model(const ModelParams& params, const std::filesystem::path& manifest_path) {
  nlohmann::json j;
  j["arch"] = {{"input_side", params.arch.input_side},
               {"in_channels", params.arch.in_channels},
               {"num_classes", params.arch.num_classes},
               {"levels", params.arch.levels},
               {"base_channels", params.arch.base_channels}};
  auto tensors = nlohmann::json::array();
  std::vector<float> blob;
  blob.reserve(params.total_size());
  for (const auto& t : params.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    blob.insert(blob.end(), t.data.begin(), t.data.end());
  }
  j["tensors"] = tensors;
  std::filesystem::path raw = manifest_path;
  raw.replace_extension(".raw");
  j["raw"] = raw.filename().string();

  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw IoError(IoError::Kind::io_failure, "manifest", "cannot open " + manifest_path.string());
  mf << j.dump(2) << "\n";
  std::ofstream rf(raw, std::ios::binary | std::ios::trunc);
  if (!rf) throw IoError(IoError::Kind::io_failure, "raw", "cannot open " + raw.string());
  static_assert(std::endian::native == std::endian::little);
  rf.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!rf) throw IoError(IoError::Kind::io_failure, "raw", "short write to " + raw.string());
}

ModelParams load_model(const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf)
    throw IoError(IoError::Kind::missing_file, "manifest", "missing file " + manifest_path.string());
  nlohmann::json j;
  try {
    mf >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "json", e.what());
  }

  ModelParams params;
  try {
    const auto& a = j.at("arch");
    params.arch.input_side = a.at("input_side").get<int>();
    params.arch.in_channels = a.at("in_channels").get<int>();
    params.arch.num_classes = a.at("num_classes").get<int>();
    params.arch.levels = a.at("levels").get<int>();
    params.arch.base_channels = a.at("base_channels").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "arch", e.what());
  }

  const auto defs = param_defs(params.arch);
  const auto& tensors = j.at("tensors");
  if (tensors.size() != defs.size())
    throw IoError(IoError::Kind::malformed_header, "tensors",
                  "tensor list does not match architecture");
  for (std::size_t i = 0; i < defs.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != defs[i].name ||
        tensors[i].at("shape").get<std::vector<int>>() != defs[i].shape)
      throw IoError(IoError::Kind::malformed_header, "tensors",
                    "tensor " + std::to_string(i) + " does not match architecture");
    params.tensors.push_back(Tensor<float>::zeros(defs[i].name, defs[i].shape));
  }

  std::filesystem::path raw = manifest_path.parent_path() / j.at("raw").get<std::string>();
  std::ifstream rf(raw, std::ios::binary | std::ios::ate);
  if (!rf) throw IoError(IoError::Kind::missing_file, "raw", "missing file " + raw.string());
  const std::int64_t bytes = rf.tellg();
  if (bytes != params.total_size() * static_cast<std::int64_t>(sizeof(float)))
    throw IoError(IoError::Kind::length_mismatch, "raw",
                  "blob length does not match parameter count");
  rf.seekg(0);
  for (auto& t : params.tensors)
    rf.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!rf) throw IoError(IoError::Kind::io_failure, "raw", "short read from " + raw.string());
  return params;
}

// ---------------------------------------------------------------- conv ops

namespace {

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

struct Range {
  int lo, hi;  // output index range [lo, hi)
};

// (re)shape a gradient tensor in place, preserving its name
template <typename T>
void reset_grad(Tensor<T>* t, const std::vector<int>& shape) {
  t->shape = shape;
  std::int64_t n = 1;
  for (int s : shape) n *= s;
  t->data.assign(n, T(0));
}

// output indices o with 0 <= stride*o + k - pad < extent
Range valid_out(int extent, int out_extent, int k, int pad, int stride) {
  const int lo = std::max(0, ceil_div(pad - k, stride));
  const int num = extent - 1 - k + pad;
  const int hi = num < 0 ? 0 : std::min(out_extent, num / stride + 1);
  return {lo, std::max(lo, hi)};
}

template <typename T>
void check_conv_shapes(const Grid3<T>& x, const Tensor<T>& kernel, const Tensor<T>* bias,
                       int stride) {
  if (kernel.shape.size() != 5 || kernel.shape[2] != kernel.shape[3] ||
      kernel.shape[3] != kernel.shape[4])
    throw std::invalid_argument("conv3d: kernel must have shape {cout,cin,k,k,k}");
  const int k = kernel.shape[2];
  if (k != 1 && k != 3) throw std::invalid_argument("conv3d: kernel size must be 1 or 3");
  if (kernel.shape[1] != x.channels)
    throw std::invalid_argument("conv3d: kernel cin " + std::to_string(kernel.shape[1]) +
                                " != input channels " + std::to_string(x.channels));
  if (bias && (bias->shape.size() != 1 || bias->shape[0] != kernel.shape[0]))
    throw std::invalid_argument("conv3d: bias shape must be {cout}");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv3d: stride must be 1 or 2");
  if (stride == 2) {
    if (k != 3) throw std::invalid_argument("conv3d: stride 2 requires kernel 3");
    if (x.dims.d0 % 2 || x.dims.d1 % 2 || x.dims.d2 % 2)
      throw std::invalid_argument("conv3d: stride 2 requires even sides");
  }
}

}  // namespace

template <typename T>
Grid3<T> conv3d_forward(const Grid3<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                        int stride) {
  check_conv_shapes(x, kernel, &bias, stride);
  const int cout = kernel.shape[0], cin = x.channels, k = kernel.shape[2], pad = k / 2;
  const auto [d0, d1, d2] = x.dims;
  const Dims3 od = stride == 1 ? x.dims : Dims3{d0 / 2, d1 / 2, d2 / 2};
  Grid3<T> out(od, cout, x.spacing_mm);

  if (k == 1) {  // pure channel mix
    const std::int64_t n = x.dims.voxels();
    parallel_for(cout, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t co = lo; co < hi; ++co) {
        T* oc = out.channel_ptr(int(co));
        std::fill(oc, oc + n, bias.data[co]);
        for (int ci = 0; ci < cin; ++ci) {
          const T w = kernel.data[co * cin + ci];
          const T* xc = x.channel_ptr(ci);
          for (std::int64_t i = 0; i < n; ++i) oc[i] += w * xc[i];
        }
      }
    });
    return out;
  }

  parallel_for(static_cast<std::int64_t>(cout) * od.d0, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t item = lo; item < hi; ++item) {
      const int co = static_cast<int>(item / od.d0);
      const int o0 = static_cast<int>(item % od.d0);
      T* oplane = out.channel_ptr(co) + static_cast<std::int64_t>(o0) * od.d1 * od.d2;
      std::fill(oplane, oplane + static_cast<std::int64_t>(od.d1) * od.d2, bias.data[co]);
      for (int ci = 0; ci < cin; ++ci) {
        const T* xc = x.channel_ptr(ci);
        const T* kc = kernel.data.data() +
                      (static_cast<std::int64_t>(co) * cin + ci) * k * k * k;
        for (int k0 = 0; k0 < k; ++k0) {
          const int i0 = stride * o0 + k0 - pad;
          if (i0 < 0 || i0 >= d0) continue;
          const T* xplane = xc + static_cast<std::int64_t>(i0) * d1 * d2;
          for (int k1 = 0; k1 < k; ++k1) {
            const Range ro1 = valid_out(d1, od.d1, k1, pad, stride);
            for (int o1 = ro1.lo; o1 < ro1.hi; ++o1) {
              const int i1 = stride * o1 + k1 - pad;
              const T* xrow = xplane + static_cast<std::int64_t>(i1) * d2;
              T* orow = oplane + static_cast<std::int64_t>(o1) * od.d2;
              for (int k2 = 0; k2 < k; ++k2) {
                const T w = kc[(k0 * k + k1) * k + k2];
                const Range ro2 = valid_out(d2, od.d2, k2, pad, stride);
                if (stride == 1) {
                  const T* xr = xrow + k2 - pad;
                  for (int o2 = ro2.lo; o2 < ro2.hi; ++o2) orow[o2] += w * xr[o2];
                } else {
                  for (int o2 = ro2.lo; o2 < ro2.hi; ++o2)
                    orow[o2] += w * xrow[2 * o2 + k2 - pad];
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
void conv3d_backward(const Grid3<T>& x, const Tensor<T>& kernel, int stride,
                     const Grid3<T>& grad_out, Grid3<T>* grad_x, Tensor<T>* grad_kernel,
                     Tensor<T>* grad_bias) {
  check_conv_shapes<T>(x, kernel, nullptr, stride);
  const int cout = kernel.shape[0], cin = x.channels, k = kernel.shape[2], pad = k / 2;
  const auto [d0, d1, d2] = x.dims;
  const Dims3 od = stride == 1 ? x.dims : Dims3{d0 / 2, d1 / 2, d2 / 2};
  if (grad_out.dims != od || grad_out.channels != cout)
    throw std::invalid_argument("conv3d_backward: grad_out shape mismatch");

  if (grad_bias) {
    reset_grad(grad_bias, {cout});
    parallel_for(cout, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t co = lo; co < hi; ++co) {
        const T* g = grad_out.channel_ptr(int(co));
        double acc = 0.0;
        for (std::int64_t i = 0; i < od.voxels(); ++i) acc += g[i];
        grad_bias->data[co] = static_cast<T>(acc);
      }
    });
  }

  if (grad_kernel) {
    reset_grad(grad_kernel, kernel.shape);
    parallel_for(cout, [&](std::int64_t lo_co, std::int64_t hi_co) {
      for (std::int64_t co = lo_co; co < hi_co; ++co) {
        const T* gc = grad_out.channel_ptr(int(co));
        for (int ci = 0; ci < cin; ++ci) {
          const T* xc = x.channel_ptr(ci);
          T* kc = grad_kernel->data.data() + (co * cin + ci) * k * k * k;
          for (int k0 = 0; k0 < k; ++k0)
            for (int k1 = 0; k1 < k; ++k1)
              for (int k2 = 0; k2 < k; ++k2) {
                const Range ro0 = valid_out(d0, od.d0, k0, pad, stride);
                const Range ro1 = valid_out(d1, od.d1, k1, pad, stride);
                const Range ro2 = valid_out(d2, od.d2, k2, pad, stride);
                double acc = 0.0;
                for (int o0 = ro0.lo; o0 < ro0.hi; ++o0) {
                  const int i0 = stride * o0 + k0 - pad;
                  const T* gplane = gc + static_cast<std::int64_t>(o0) * od.d1 * od.d2;
                  const T* xplane = xc + static_cast<std::int64_t>(i0) * d1 * d2;
                  for (int o1 = ro1.lo; o1 < ro1.hi; ++o1) {
                    const int i1 = stride * o1 + k1 - pad;
                    const T* grow = gplane + static_cast<std::int64_t>(o1) * od.d2;
                    const T* xrow = xplane + static_cast<std::int64_t>(i1) * d2;
                    if (stride == 1) {
                      const T* xr = xrow + k2 - pad;
                      for (int o2 = ro2.lo; o2 < ro2.hi; ++o2) acc += double(grow[o2]) * xr[o2];
                    } else {
                      for (int o2 = ro2.lo; o2 < ro2.hi; ++o2)
                        acc += double(grow[o2]) * xrow[2 * o2 + k2 - pad];
                    }
                  }
                }
                kc[(k0 * k + k1) * k + k2] = static_cast<T>(acc);
              }
        }
      }
    });
  }

  if (!grad_x) return;
  *grad_x = Grid3<T>(x.dims, cin, x.spacing_mm);

  if (k == 1) {
    const std::int64_t n = x.dims.voxels();
    parallel_for(cin, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t ci = lo; ci < hi; ++ci) {
        T* gx = grad_x->channel_ptr(int(ci));
        for (int co = 0; co < cout; ++co) {
          const T w = kernel.data[static_cast<std::int64_t>(co) * cin + ci];
          const T* g = grad_out.channel_ptr(co);
          for (std::int64_t i = 0; i < n; ++i) gx[i] += w * g[i];
        }
      }
    });
    return;
  }

  if (stride == 1) {
    // gather: grad_x[ci][i] = sum_co sum_k W[co][ci][k] * gout[co][i - k + pad]
    parallel_for(static_cast<std::int64_t>(cin) * d0, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t item = lo; item < hi; ++item) {
        const int ci = static_cast<int>(item / d0);
        const int i0 = static_cast<int>(item % d0);
        T* gxplane = grad_x->channel_ptr(ci) + static_cast<std::int64_t>(i0) * d1 * d2;
        for (int co = 0; co < cout; ++co) {
          const T* gc = grad_out.channel_ptr(co);
          const T* kc = kernel.data.data() +
                        (static_cast<std::int64_t>(co) * cin + ci) * k * k * k;
          for (int k0 = 0; k0 < k; ++k0) {
            const int o0 = i0 - k0 + pad;
            if (o0 < 0 || o0 >= od.d0) continue;
            const T* gplane = gc + static_cast<std::int64_t>(o0) * od.d1 * od.d2;
            for (int k1 = 0; k1 < k; ++k1) {
              for (int i1 = 0; i1 < d1; ++i1) {
                const int o1 = i1 - k1 + pad;
                if (o1 < 0 || o1 >= od.d1) continue;
                T* gxrow = gxplane + static_cast<std::int64_t>(i1) * d2;
                const T* grow = gplane + static_cast<std::int64_t>(o1) * od.d2;
                for (int k2 = 0; k2 < k; ++k2) {
                  const T w = kc[(k0 * k + k1) * k + k2];
                  const int lo2 = std::max(0, k2 - pad);
                  const int hi2 = std::min(d2, od.d2 + k2 - pad);
                  const T* gr = grow - k2 + pad;
                  for (int i2 = lo2; i2 < hi2; ++i2) gxrow[i2] += w * gr[i2];
                }
              }
            }
          }
        }
      }
    });
  } else {
    // scatter per input channel: grad_x[ci][2o + k - pad] += W * gout[co][o]
    parallel_for(cin, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t ci = lo; ci < hi; ++ci) {
        T* gx = grad_x->channel_ptr(int(ci));
        for (int co = 0; co < cout; ++co) {
          const T* gc = grad_out.channel_ptr(co);
          const T* kc = kernel.data.data() +
                        (static_cast<std::int64_t>(co) * cin + ci) * k * k * k;
          for (int k0 = 0; k0 < k; ++k0) {
            const Range ro0 = valid_out(d0, od.d0, k0, pad, stride);
            for (int k1 = 0; k1 < k; ++k1) {
              const Range ro1 = valid_out(d1, od.d1, k1, pad, stride);
              for (int k2 = 0; k2 < k; ++k2) {
                const Range ro2 = valid_out(d2, od.d2, k2, pad, stride);
                const T w = kc[(k0 * k + k1) * k + k2];
                for (int o0 = ro0.lo; o0 < ro0.hi; ++o0) {
                  const int i0 = 2 * o0 + k0 - pad;
                  const T* gplane = gc + static_cast<std::int64_t>(o0) * od.d1 * od.d2;
                  T* gxplane = gx + static_cast<std::int64_t>(i0) * d1 * d2;
                  for (int o1 = ro1.lo; o1 < ro1.hi; ++o1) {
                    const int i1 = 2 * o1 + k1 - pad;
                    const T* grow = gplane + static_cast<std::int64_t>(o1) * od.d2;
                    T* gxrow = gxplane + static_cast<std::int64_t>(i1) * d2;
                    for (int o2 = ro2.lo; o2 < ro2.hi; ++o2)
                      gxrow[2 * o2 + k2 - pad] += w * grow[o2];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
}

template <typename T>
Grid3<T> conv3d_transpose_forward(const Grid3<T>& x, const Tensor<T>& kernel,
                                  const Tensor<T>& bias) {
  if (kernel.shape.size() != 5 || kernel.shape[2] != 2 || kernel.shape[3] != 2 ||
      kernel.shape[4] != 2)
    throw std::invalid_argument("conv3d_transpose: kernel must have shape {cout,cin,2,2,2}");
  if (kernel.shape[1] != x.channels)
    throw std::invalid_argument("conv3d_transpose: channel mismatch");
  const int cout = kernel.shape[0], cin = x.channels;
  if (bias.shape.size() != 1 || bias.shape[0] != cout)
    throw std::invalid_argument("conv3d_transpose: bias shape must be {cout}");

  const auto [d0, d1, d2] = x.dims;
  const Dims3 od{2 * d0, 2 * d1, 2 * d2};
  Grid3<T> out(od, cout, x.spacing_mm);

  parallel_for(static_cast<std::int64_t>(cout) * od.d0, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t item = lo; item < hi; ++item) {
      const int co = static_cast<int>(item / od.d0);
      const int o0 = static_cast<int>(item % od.d0);
      const int i0 = o0 >> 1, p0 = o0 & 1;
      T* oplane = out.channel_ptr(co) + static_cast<std::int64_t>(o0) * od.d1 * od.d2;
      std::fill(oplane, oplane + static_cast<std::int64_t>(od.d1) * od.d2, bias.data[co]);
      for (int ci = 0; ci < cin; ++ci) {
        const T* xplane = x.channel_ptr(ci) + static_cast<std::int64_t>(i0) * d1 * d2;
        const T* kc = kernel.data.data() + (static_cast<std::int64_t>(co) * cin + ci) * 8;
        for (int o1 = 0; o1 < od.d1; ++o1) {
          const int i1 = o1 >> 1, p1 = o1 & 1;
          const T* xrow = xplane + static_cast<std::int64_t>(i1) * d2;
          T* orow = oplane + static_cast<std::int64_t>(o1) * od.d2;
          const T w0 = kc[(p0 * 2 + p1) * 2 + 0];
          const T w1 = kc[(p0 * 2 + p1) * 2 + 1];
          for (int j = 0; j < d2; ++j) {
            orow[2 * j] += w0 * xrow[j];
            orow[2 * j + 1] += w1 * xrow[j];
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
void conv3d_transpose_backward(const Grid3<T>& x, const Tensor<T>& kernel,
                               const Grid3<T>& grad_out, Grid3<T>* grad_x,
                               Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const int cout = kernel.shape[0], cin = x.channels;
  const auto [d0, d1, d2] = x.dims;
  const Dims3 od{2 * d0, 2 * d1, 2 * d2};
  if (grad_out.dims != od || grad_out.channels != cout)
    throw std::invalid_argument("conv3d_transpose_backward: grad_out shape mismatch");

  if (grad_bias) {
    reset_grad(grad_bias, {cout});
    parallel_for(cout, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t co = lo; co < hi; ++co) {
        const T* g = grad_out.channel_ptr(int(co));
        double acc = 0.0;
        for (std::int64_t i = 0; i < od.voxels(); ++i) acc += g[i];
        grad_bias->data[co] = static_cast<T>(acc);
      }
    });
  }

  if (grad_kernel) {
    reset_grad(grad_kernel, kernel.shape);
    parallel_for(cout, [&](std::int64_t lo_co, std::int64_t hi_co) {
      for (std::int64_t co = lo_co; co < hi_co; ++co) {
        const T* gc = grad_out.channel_ptr(int(co));
        for (int ci = 0; ci < cin; ++ci) {
          const T* xc = x.channel_ptr(ci);
          T* kc = grad_kernel->data.data() + (co * cin + ci) * 8;
          for (int p0 = 0; p0 < 2; ++p0)
            for (int p1 = 0; p1 < 2; ++p1)
              for (int p2 = 0; p2 < 2; ++p2) {
                double acc = 0.0;
                for (int i0 = 0; i0 < d0; ++i0) {
                  const T* gplane =
                      gc + (static_cast<std::int64_t>(2 * i0 + p0) * od.d1) * od.d2;
                  const T* xplane = xc + static_cast<std::int64_t>(i0) * d1 * d2;
                  for (int i1 = 0; i1 < d1; ++i1) {
                    const T* grow = gplane + static_cast<std::int64_t>(2 * i1 + p1) * od.d2;
                    const T* xrow = xplane + static_cast<std::int64_t>(i1) * d2;
                    for (int j = 0; j < d2; ++j)
                      acc += double(grow[2 * j + p2]) * xrow[j];
                  }
                }
                kc[(p0 * 2 + p1) * 2 + p2] = static_cast<T>(acc);
              }
        }
      }
    });
  }

  if (!grad_x) return;
  *grad_x = Grid3<T>(x.dims, cin, x.spacing_mm);
  parallel_for(static_cast<std::int64_t>(cin) * d0, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t item = lo; item < hi; ++item) {
      const int ci = static_cast<int>(item / d0);
      const int i0 = static_cast<int>(item % d0);
      T* gxplane = grad_x->channel_ptr(ci) + static_cast<std::int64_t>(i0) * d1 * d2;
      for (int co = 0; co < cout; ++co) {
        const T* gc = grad_out.channel_ptr(co);
        const T* kc = kernel.data.data() + (static_cast<std::int64_t>(co) * cin + ci) * 8;
        for (int p0 = 0; p0 < 2; ++p0) {
          const T* gplane = gc + static_cast<std::int64_t>(2 * i0 + p0) * od.d1 * od.d2;
          for (int i1 = 0; i1 < d1; ++i1) {
            T* gxrow = gxplane + static_cast<std::int64_t>(i1) * d2;
            for (int p1 = 0; p1 < 2; ++p1) {
              const T* grow = gplane + static_cast<std::int64_t>(2 * i1 + p1) * od.d2;
              const T w0 = kc[(p0 * 2 + p1) * 2 + 0];
              const T w1 = kc[(p0 * 2 + p1) * 2 + 1];
              for (int j = 0; j < d2; ++j)
                gxrow[j] += w0 * grow[2 * j] + w1 * grow[2 * j + 1];
            }
          }
        }
      }
    }
  });
}

template <typename T>
void relu_forward_inplace(Grid3<T>& a) {
  const T leak = static_cast<T>(kReluLeak);
  for (T& v : a.data)
    if (v < T(0)) v *= leak;
}

template <typename T>
void relu_backward_inplace(const Grid3<T>& out, Grid3<T>& grad) {
  if (out.data.size() != grad.data.size())
    throw std::invalid_argument("relu_backward: shape mismatch");
  const T leak = static_cast<T>(kReluLeak);
  for (std::size_t i = 0; i < grad.data.size(); ++i)
    if (!(out.data[i] > T(0))) grad.data[i] *= leak;
}

template <typename T>
Grid3<T> softmax_channels(const Grid3<T>& logits) {
  const int K = logits.channels;
  const std::int64_t n = logits.dims.voxels();
  Grid3<T> prob(logits.dims, K, logits.spacing_mm);
  parallel_for(logits.dims.d0, [&](std::int64_t lo, std::int64_t hi) {
    const std::int64_t plane = static_cast<std::int64_t>(logits.dims.d1) * logits.dims.d2;
    for (std::int64_t i0 = lo; i0 < hi; ++i0)
      for (std::int64_t i = i0 * plane; i < (i0 + 1) * plane; ++i) {
        T m = logits.data[i];
        for (int c = 1; c < K; ++c) m = std::max(m, logits.data[c * n + i]);
        double sum = 0.0;
        for (int c = 0; c < K; ++c) {
          const T e = std::exp(logits.data[c * n + i] - m);
          prob.data[c * n + i] = e;
          sum += e;
        }
        const T inv = static_cast<T>(1.0 / sum);
        for (int c = 0; c < K; ++c) prob.data[c * n + i] *= inv;
      }
  });
  return prob;
}

template <typename T>
Grid3<T> softmax_backward(const Grid3<T>& prob, const Grid3<T>& grad_prob) {
  if (prob.dims != grad_prob.dims || prob.channels != grad_prob.channels)
    throw std::invalid_argument("softmax_backward: shape mismatch");
  const int K = prob.channels;
  const std::int64_t n = prob.dims.voxels();
  Grid3<T> out(prob.dims, K, prob.spacing_mm);
  parallel_for(prob.dims.d0, [&](std::int64_t lo, std::int64_t hi) {
    const std::int64_t plane = static_cast<std::int64_t>(prob.dims.d1) * prob.dims.d2;
    for (std::int64_t i0 = lo; i0 < hi; ++i0)
      for (std::int64_t i = i0 * plane; i < (i0 + 1) * plane; ++i) {
        double dot = 0.0;
        for (int c = 0; c < K; ++c)
          dot += double(prob.data[c * n + i]) * grad_prob.data[c * n + i];
        for (int c = 0; c < K; ++c)
          out.data[c * n + i] =
              static_cast<T>(double(prob.data[c * n + i]) * (double(grad_prob.data[c * n + i]) - dot));
      }
  });
  return out;
}

// ---------------------------------------------------------------- network

namespace {

template <typename T>
Grid3<T> concat_channels(const Grid3<T>& a, const Grid3<T>& b) {
  if (a.dims != b.dims) throw std::invalid_argument("concat: dims mismatch");
  Grid3<T> out(a.dims, a.channels + b.channels, a.spacing_mm);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

template <typename T>
Grid3<T> slice_channels(const Grid3<T>& g, int from, int count) {
  Grid3<T> out(g.dims, count, g.spacing_mm);
  const std::int64_t n = g.dims.voxels();
  std::copy(g.data.begin() + from * n, g.data.begin() + (from + count) * n, out.data.begin());
  return out;
}

}  // namespace

template <typename T>
Grid3<T> forward(const ArchSpec& arch, const Params<T>& params, const Grid3<T>& x,
                 Tape<T>* tape) {
  arch.validate();
  if (x.channels != arch.in_channels)
    throw std::invalid_argument("forward: input has " + std::to_string(x.channels) +
                                " channels, expected " + std::to_string(arch.in_channels));
  if (x.dims.d0 != arch.input_side || x.dims.d1 != arch.input_side ||
      x.dims.d2 != arch.input_side)
    throw std::invalid_argument("forward: input side " + x.dims.str() + " != expected " +
                                std::to_string(arch.input_side));

  const int L = arch.levels;
  Tape<T> local;
  Tape<T>& t = tape ? *tape : local;
  t.enc_a1.assign(L, {});
  t.enc_a2.assign(L, {});
  t.down_out.assign(std::max(0, L - 1), {});
  t.up_out.assign(std::max(0, L - 1), {});
  t.cat.assign(std::max(0, L - 1), {});
  t.dec_a1.assign(std::max(0, L - 1), {});
  t.dec_a2.assign(std::max(0, L - 1), {});
  t.input = x;

  const auto conv_relu = [&](const Grid3<T>& in, const std::string& name, int stride) {
    Grid3<T> out = conv3d_forward(in, params.find(name + ".weight"),
                                  params.find(name + ".bias"), stride);
    relu_forward_inplace(out);
    return out;
  };

  for (int l = 0; l < L; ++l) {
    const std::string enc = "enc" + std::to_string(l);
    const Grid3<T>& in = l == 0 ? t.input : t.down_out[l - 1];
    t.enc_a1[l] = conv_relu(in, enc + ".conv1", 1);
    t.enc_a2[l] = conv_relu(t.enc_a1[l], enc + ".conv2", 1);
    if (l < L - 1) t.down_out[l] = conv_relu(t.enc_a2[l], "down" + std::to_string(l), 2);
  }

  for (int l = L - 2; l >= 0; --l) {
    const Grid3<T>& in = l == L - 2 ? t.enc_a2[L - 1] : t.dec_a2[l + 1];
    const std::string up = "up" + std::to_string(l);
    Grid3<T> u = conv3d_transpose_forward(in, params.find(up + ".weight"),
                                          params.find(up + ".bias"));
    relu_forward_inplace(u);
    t.up_out[l] = std::move(u);
    t.cat[l] = concat_channels(t.up_out[l], t.enc_a2[l]);
    const std::string dec = "dec" + std::to_string(l);
    t.dec_a1[l] = conv_relu(t.cat[l], dec + ".conv1", 1);
    t.dec_a2[l] = conv_relu(t.dec_a1[l], dec + ".conv2", 1);
  }

  Grid3<T> logits =
      conv3d_forward(t.dec_a2[0], params.find("head.weight"), params.find("head.bias"), 1);
  t.prob = softmax_channels(logits);
  return t.prob;
}

template <typename T>
Params<T> backward(const ArchSpec& arch, const Params<T>& params, const Tape<T>& tape,
                   const Grid3<T>& grad_prob, const std::set<std::string>* frozen) {
  return backward_from_logits(arch, params, tape, softmax_backward(tape.prob, grad_prob),
                              frozen);
}

template <typename T>
Params<T> backward_from_logits(const ArchSpec& arch, const Params<T>& params,
                               const Tape<T>& tape, const Grid3<T>& grad_logits,
                               const std::set<std::string>* frozen) {
  const int L = arch.levels;
  Params<T> grads = zeros_like(params);

  const auto conv_bwd = [&](const std::string& name, const Grid3<T>& input, int stride,
                            const Grid3<T>& gout) {
    Grid3<T> gx;
    conv3d_backward(input, params.find(name + ".weight"), stride, gout, &gx,
                    &grads.find(name + ".weight"), &grads.find(name + ".bias"));
    return gx;
  };

  Grid3<T> g = conv_bwd("head", tape.dec_a2[0], 1, grad_logits);

  std::vector<Grid3<T>> skip_grad(std::max(0, L - 1));
  for (int l = 0; l <= L - 2; ++l) {
    const std::string dec = "dec" + std::to_string(l);
    relu_backward_inplace(tape.dec_a2[l], g);
    g = conv_bwd(dec + ".conv2", tape.dec_a1[l], 1, g);
    relu_backward_inplace(tape.dec_a1[l], g);
    g = conv_bwd(dec + ".conv1", tape.cat[l], 1, g);

    const int c = arch.channels_at(l);
    Grid3<T> g_up = slice_channels(g, 0, c);
    skip_grad[l] = slice_channels(g, c, c);

    relu_backward_inplace(tape.up_out[l], g_up);
    const Grid3<T>& up_in = l == L - 2 ? tape.enc_a2[L - 1] : tape.dec_a2[l + 1];
    const std::string up = "up" + std::to_string(l);
    Grid3<T> gx;
    conv3d_transpose_backward(up_in, params.find(up + ".weight"), g_up, &gx,
                              &grads.find(up + ".weight"), &grads.find(up + ".bias"));
    g = std::move(gx);
  }

  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) {
      relu_backward_inplace(tape.down_out[l], g);
      g = conv_bwd("down" + std::to_string(l), tape.enc_a2[l], 2, g);
      for (std::int64_t i = 0; i < g.size(); ++i) g.data[i] += skip_grad[l].data[i];
    }
    const std::string enc = "enc" + std::to_string(l);
    relu_backward_inplace(tape.enc_a2[l], g);
    g = conv_bwd(enc + ".conv2", tape.enc_a1[l], 1, g);
    relu_backward_inplace(tape.enc_a1[l], g);
    g = conv_bwd(enc + ".conv1", l == 0 ? tape.input : tape.down_out[l - 1], 1, g);
  }

  if (frozen)
    for (auto& t : grads.tensors)
      if (frozen->count(t.name)) std::fill(t.data.begin(), t.data.end(), T(0));
  return grads;
}

double LrSchedule::at_epoch(int epoch) const {
  const int steps = decay_every_epochs > 0 ? epoch / decay_every_epochs : 0;
  return initial / std::pow(decay_factor, steps);
}

template <typename T>
AdamState<T> AdamState<T>::init(const Params<T>& params) {
  AdamState<T> s;
  s.m.reserve(params.tensors.size());
  s.v.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    s.m.push_back(Tensor<T>::zeros(t.name, t.shape));
    s.v.push_back(Tensor<T>::zeros(t.name, t.shape));
  }
  return s;
}

template <typename T>
void adam_step(Params<T>& params, const Params<T>& grads, AdamState<T>& state, double lr) {
  if (grads.tensors.size() != params.tensors.size() ||
      state.m.size() != params.tensors.size())
    throw std::invalid_argument("adam_step: state/gradient layout mismatch");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(state.step));
  const double bc2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& w = params.tensors[ti];
    const auto& g = grads.tensors[ti];
    auto& m = state.m[ti];
    auto& v = state.v[ti];
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double gi = g.data[i];
      if (!std::isfinite(gi))
        throw std::runtime_error("adam_step: non-finite gradient for " + w.name);
      const double mi = b1 * m.data[i] + (1.0 - b1) * gi;
      const double vi = b2 * v.data[i] + (1.0 - b2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      w.data[i] = static_cast<T>(w.data[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps));
    }
  }
}

// ---------------------------------------------------------------- instantiations

#define XREC_INSTANTIATE_NETWORK(T)                                                         \
  template struct Tensor<T>;                                                                \
  template struct Params<T>;                                                                \
  template struct AdamState<T>;                                                             \
  template Params<T> init_params<T>(const ArchSpec&, std::uint64_t);                        \
  template Params<T> zeros_like(const Params<T>&);                                          \
  template Grid3<T> conv3d_forward(const Grid3<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                   int);                                                    \
  template void conv3d_backward(const Grid3<T>&, const Tensor<T>&, int, const Grid3<T>&,   \
                                Grid3<T>*, Tensor<T>*, Tensor<T>*);                        \
  template Grid3<T> conv3d_transpose_forward(const Grid3<T>&, const Tensor<T>&,            \
                                             const Tensor<T>&);                            \
  template void conv3d_transpose_backward(const Grid3<T>&, const Tensor<T>&,               \
                                          const Grid3<T>&, Grid3<T>*, Tensor<T>*,          \
                                          Tensor<T>*);                                     \
  template void relu_forward_inplace(Grid3<T>&);                                           \
  template void relu_backward_inplace(const Grid3<T>&, Grid3<T>&);                         \
  template Grid3<T> softmax_channels(const Grid3<T>&);                                     \
  template Grid3<T> softmax_backward(const Grid3<T>&, const Grid3<T>&);                    \
  template Grid3<T> forward(const ArchSpec&, const Params<T>&, const Grid3<T>&, Tape<T>*); \
  template Params<T> backward(const ArchSpec&, const Params<T>&, const Tape<T>&,           \
                              const Grid3<T>&, const std::set<std::string>*);              \
  template Params<T> backward_from_logits(const ArchSpec&, const Params<T>&,               \
                                          const Tape<T>&, const Grid3<T>&,                 \
                                          const std::set<std::string>*);                   \
  template void adam_step(Params<T>&, const Params<T>&, AdamState<T>&, double);

XREC_INSTANTIATE_NETWORK(float)
XREC_INSTANTIATE_NETWORK(double)

#undef XREC_INSTANTIATE_NETWORK

template Params<double> params_cast<double, float>(const Params<float>&);
template Params<float> params_cast<float, double>(const Params<double>&);

}  // namespace xrec
