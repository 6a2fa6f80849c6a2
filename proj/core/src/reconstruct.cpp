#include "xrec/reconstruct.hpp"

#include <chrono>
#include <fstream>

#include <json.hpp>

#include "xrec/io.hpp"
#include "xrec/marching_cubes.hpp"
#include "xrec/projection.hpp"

namespace xrec {

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

ReconstructResult reconstruct(const ModelParams& model, const Image2D& ap,
                              const Image2D& lat) {
  if (ap.rows != model.arch.input_side || ap.cols != model.arch.input_side ||
      lat.rows != model.arch.input_side || lat.cols != model.arch.input_side)
    throw std::invalid_argument(
        "reconstruct: image side " + std::to_string(ap.rows) + "x" + std::to_string(ap.cols) +
        " / " + std::to_string(lat.rows) + "x" + std::to_string(lat.cols) +
        " does not match model input_side " + std::to_string(model.arch.input_side));

  ReconstructResult result;
  const auto t_total = std::chrono::steady_clock::now();

  auto t = std::chrono::steady_clock::now();
  const Volume input = build_epipolar_volume(ap, lat);
  result.timing.epipolar_ms = ms_since(t);

  t = std::chrono::steady_clock::now();
  const Volume prob = forward<float>(model.arch, model, input, nullptr);
  result.timing.forward_ms = ms_since(t);

  t = std::chrono::steady_clock::now();
  result.labels = argmax_labels(prob);
  result.timing.argmax_ms = ms_since(t);

  t = std::chrono::steady_clock::now();
  result.meshes = extract_bones(result.labels);
  result.timing.meshing_ms = ms_since(t);

  result.timing.total_ms = ms_since(t_total);
  return result;
}

void write_reconstruction(const ReconstructResult& result,
                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_labels(result.labels, out_dir / "labels.json");
  for (const Mesh& m : result.meshes)
    write_mesh_obj(m, out_dir / ("bone_" + std::string(bone_name(m.class_id)) + ".obj"));

  nlohmann::json j;
  j["epipolar_ms"] = result.timing.epipolar_ms;
  j["forward_ms"] = result.timing.forward_ms;
  j["argmax_ms"] = result.timing.argmax_ms;
  j["meshing_ms"] = result.timing.meshing_ms;
  j["total_ms"] = result.timing.total_ms;
  std::ofstream out(out_dir / "timing.json", std::ios::trunc);
  if (!out)
    throw IoError(IoError::Kind::io_failure, "timing", "cannot open timing.json");
  out << j.dump(2) << "\n";
}

}  // namespace xrec
