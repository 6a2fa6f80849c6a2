#include "xrec/grid.hpp"

namespace xrec {

const char* bone_name(int class_id) {
  switch (class_id) {
    case 0: return "background";
    case 1: return "femur";
    case 2: return "patella";
    case 3: return "tibia";
    case 4: return "fibula";
    default: throw std::invalid_argument("bone_name: class_id out of range 0..4");
  }
}

void LabelVolume::validate_classes(int num_classes) const {
  for (std::uint8_t v : data)
    if (v >= num_classes)
      throw std::invalid_argument("LabelVolume: label " + std::to_string(int(v)) +
                                  " >= num_classes " + std::to_string(num_classes));
}

void Mesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= n)
        throw std::invalid_argument("Mesh: triangle index out of range");
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
      throw std::invalid_argument("Mesh: degenerate triangle");
  }
}

template <typename T>
Grid3<T> one_hot_t(const LabelVolume& labels, int num_classes) {
  labels.validate_classes(num_classes);
  Grid3<T> out(labels.dims, num_classes, labels.spacing_mm);
  const std::int64_t n = labels.dims.voxels();
  for (std::int64_t i = 0; i < n; ++i)
    out.data[static_cast<std::int64_t>(labels.data[i]) * n + i] = T(1);
  return out;
}

template Grid3<float> one_hot_t<float>(const LabelVolume&, int);
template Grid3<double> one_hot_t<double>(const LabelVolume&, int);

Volume one_hot(const LabelVolume& labels, int num_classes) {
  return one_hot_t<float>(labels, num_classes);
}

LabelVolume argmax_labels(const Volume& prob) {
  LabelVolume out(prob.dims, prob.spacing_mm);
  const std::int64_t n = prob.dims.voxels();
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    float best_v = prob.data[i];
    for (int c = 1; c < prob.channels; ++c) {
      const float v = prob.data[static_cast<std::int64_t>(c) * n + i];
      if (v > best_v) {  // strict: ties keep the lower class id
        best_v = v;
        best = c;
      }
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace xrec
