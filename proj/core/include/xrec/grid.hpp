#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace xrec {

// Shared grid conventions:
//   - flat index of voxel (i0,i1,i2) in channel c is ((c*d0 + i0)*d1 + i1)*d2 + i2
//   - d0 is the cranio-caudal (image row / height) axis, d1 the AP ray axis,
//     d2 the lateral ray axis; every d0-slice of an epipolar volume is one
//     epipolar plane
//   - voxel i sits at physical position i * spacing_mm on each axis

struct Dims3 {
  int d0 = 0, d1 = 0, d2 = 0;

  friend bool operator==(const Dims3&, const Dims3&) = default;
  std::int64_t voxels() const {
    return static_cast<std::int64_t>(d0) * d1 * d2;
  }
  std::string str() const {
    return "(" + std::to_string(d0) + "," + std::to_string(d1) + "," +
           std::to_string(d2) + ")";
  }
};

using Spacing3 = std::array<double, 3>;

/// Dense channel-major 3D grid. Volume = Grid3<float> is the on-disk type;
/// the double instantiation backs the 64-bit gradient-check paths.
template <typename T>
struct Grid3 {
  Dims3 dims{};
  int channels = 1;
  Spacing3 spacing_mm{1.0, 1.0, 1.0};
  std::vector<T> data;

  Grid3() = default;
  Grid3(Dims3 d, int ch, Spacing3 sp = {1.0, 1.0, 1.0})
      : dims(d), channels(ch), spacing_mm(sp),
        data(static_cast<std::size_t>(ch) * d.voxels(), T(0)) {
    if (d.d0 < 1 || d.d1 < 1 || d.d2 < 1)
      throw std::invalid_argument("Grid3: dims must all be >= 1, got " + d.str());
    if (ch < 1) throw std::invalid_argument("Grid3: channels must be >= 1");
    for (double s : sp)
      if (!(s > 0.0)) throw std::invalid_argument("Grid3: spacing_mm must be > 0");
  }

  std::int64_t size() const { return static_cast<std::int64_t>(channels) * dims.voxels(); }

  std::int64_t index(int c, int i0, int i1, int i2) const {
    return ((static_cast<std::int64_t>(c) * dims.d0 + i0) * dims.d1 + i1) * dims.d2 + i2;
  }
  T& at(int c, int i0, int i1, int i2) { return data[index(c, i0, i1, i2)]; }
  const T& at(int c, int i0, int i1, int i2) const { return data[index(c, i0, i1, i2)]; }

  T* channel_ptr(int c) { return data.data() + static_cast<std::size_t>(c) * dims.voxels(); }
  const T* channel_ptr(int c) const {
    return data.data() + static_cast<std::size_t>(c) * dims.voxels();
  }

  bool in_bounds(int i0, int i1, int i2) const {
    return i0 >= 0 && i0 < dims.d0 && i1 >= 0 && i1 < dims.d1 && i2 >= 0 && i2 < dims.d2;
  }
};

using Volume = Grid3<float>;

template <typename To, typename From>
Grid3<To> grid_cast(const Grid3<From>& g) {
  Grid3<To> out(g.dims, g.channels, g.spacing_mm);
  for (std::int64_t i = 0; i < g.size(); ++i) out.data[i] = static_cast<To>(g.data[i]);
  return out;
}

constexpr int kNumClasses = 5;  // background, femur, patella, tibia, fibula

/// Class ids follow the fixed label convention 0..4.
const char* bone_name(int class_id);

/// Dense grid of class ids in {0..4}; always single channel.
struct LabelVolume {
  Dims3 dims{};
  Spacing3 spacing_mm{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  LabelVolume() = default;
  LabelVolume(Dims3 d, Spacing3 sp = {1.0, 1.0, 1.0})
      : dims(d), spacing_mm(sp), data(static_cast<std::size_t>(d.voxels()), 0) {
    if (d.d0 < 1 || d.d1 < 1 || d.d2 < 1)
      throw std::invalid_argument("LabelVolume: dims must all be >= 1");
  }

  std::int64_t index(int i0, int i1, int i2) const {
    return (static_cast<std::int64_t>(i0) * dims.d1 + i1) * dims.d2 + i2;
  }
  std::uint8_t& at(int i0, int i1, int i2) { return data[index(i0, i1, i2)]; }
  const std::uint8_t& at(int i0, int i1, int i2) const { return data[index(i0, i1, i2)]; }

  void validate_classes(int num_classes = kNumClasses) const;
};

/// Dense 2D scalar image, row-major, square pixels of pixel_mm millimeters.
template <typename T>
struct Image2 {
  int rows = 0, cols = 0;
  double pixel_mm = 1.0;
  std::vector<T> data;

  Image2() = default;
  Image2(int r, int c, double px = 1.0)
      : rows(r), cols(c), pixel_mm(px), data(static_cast<std::size_t>(r) * c, T(0)) {
    if (r < 1 || c < 1) throw std::invalid_argument("Image2: dims must be >= 1");
    if (!(px > 0.0)) throw std::invalid_argument("Image2: pixel_mm must be > 0");
  }

  std::int64_t index(int r, int c) const { return static_cast<std::int64_t>(r) * cols + c; }
  T& at(int r, int c) { return data[index(r, c)]; }
  const T& at(int r, int c) const { return data[index(r, c)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(rows) * cols; }
};

using Image2D = Image2<float>;

template <typename To, typename From>
Image2<To> image_cast(const Image2<From>& img) {
  Image2<To> out(img.rows, img.cols, img.pixel_mm);
  for (std::int64_t i = 0; i < img.size(); ++i) out.data[i] = static_cast<To>(img.data[i]);
  return out;
}

/// Indexed triangle surface in millimeter coordinates.
struct Mesh {
  std::vector<std::array<double, 3>> vertices;
  std::vector<std::array<int, 3>> triangles;
  int class_id = 0;

  bool empty() const { return triangles.empty(); }
  void validate() const;  // index bounds and non-degenerate triangles
};

/// Per-class indicator channels: channel k is 1 where label == k.
template <typename T>
Grid3<T> one_hot_t(const LabelVolume& labels, int num_classes);

Volume one_hot(const LabelVolume& labels, int num_classes = kNumClasses);

/// Per-voxel argmax over channels; ties resolve to the lower class id.
LabelVolume argmax_labels(const Volume& prob);

}  // namespace xrec
