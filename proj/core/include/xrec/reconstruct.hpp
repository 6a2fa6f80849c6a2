#pragma once

#include <array>
#include <filesystem>

#include "xrec/grid.hpp"
#include "xrec/network.hpp"

namespace xrec {

struct ReconstructTiming {
  double epipolar_ms = 0.0;
  double forward_ms = 0.0;
  double argmax_ms = 0.0;
  double meshing_ms = 0.0;
  double total_ms = 0.0;
};

struct ReconstructResult {
  LabelVolume labels;
  std::array<Mesh, 4> meshes;
  ReconstructTiming timing;
};

/// Epipolar build -> forward -> per-voxel argmax -> bone meshes.
/// Pure inference: consumes only the model and the two images.
ReconstructResult reconstruct(const ModelParams& model, const Image2D& ap,
                              const Image2D& lat);

/// labels.json, bone_{femur,patella,tibia,fibula}.obj and timing.json.
void write_reconstruction(const ReconstructResult& result,
                          const std::filesystem::path& out_dir);

}  // namespace xrec
