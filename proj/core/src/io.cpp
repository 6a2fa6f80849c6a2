#include "xrec/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace xrec {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path raw_path_for(const fs::path& header_path) {
  fs::path p = header_path;
  p.replace_extension(".raw");
  return p;
}

void write_bytes(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io_failure, "raw", "cannot open " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError(IoError::Kind::io_failure, "raw", "short write to " + path.string());
}

std::vector<char> read_bytes(const fs::path& path, const char* field) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError(IoError::Kind::missing_file, field, "missing file " + path.string());
  const auto end = in.tellg();
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(end));
  in.read(buf.data(), end);
  if (!in) throw IoError(IoError::Kind::io_failure, field, "short read from " + path.string());
  return buf;
}

static_assert(std::endian::native == std::endian::little,
              "raw container payloads are little-endian; add byte swapping for this target");

json header_json(Dims3 dims, int channels, const Spacing3& sp, const char* dtype,
                 const fs::path& raw_name) {
  json h;
  h["dims"] = {dims.d0, dims.d1, dims.d2};
  h["channels"] = channels;
  h["spacing_mm"] = {sp[0], sp[1], sp[2]};
  h["dtype"] = dtype;
  h["raw"] = raw_name.string();
  return h;
}

struct Header {
  Dims3 dims;
  int channels;
  Spacing3 spacing;
  std::string dtype;
  fs::path raw;
};

Header parse_header(const fs::path& header_path) {
  if (!fs::exists(header_path))
    throw IoError(IoError::Kind::missing_file, "header", "missing file " + header_path.string());
  std::ifstream in(header_path);
  json h;
  try {
    in >> h;
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "json", e.what());
  }

  Header out;
  try {
    const auto& d = h.at("dims");
    if (!d.is_array() || d.size() != 3)
      throw IoError(IoError::Kind::malformed_header, "dims", "dims must be a 3-array");
    out.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    if (out.dims.d0 < 1 || out.dims.d1 < 1 || out.dims.d2 < 1)
      throw IoError(IoError::Kind::malformed_header, "dims", "dims must be >= 1");
    out.channels = h.at("channels").get<int>();
    if (out.channels < 1)
      throw IoError(IoError::Kind::malformed_header, "channels", "channels must be >= 1");
    const auto& s = h.at("spacing_mm");
    if (!s.is_array() || s.size() != 3)
      throw IoError(IoError::Kind::malformed_header, "spacing_mm", "spacing_mm must be a 3-array");
    out.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    for (double v : out.spacing)
      if (!(v > 0.0))
        throw IoError(IoError::Kind::malformed_header, "spacing_mm", "spacing_mm must be > 0");
    out.dtype = h.at("dtype").get<std::string>();
    if (out.dtype != "f32" && out.dtype != "u8")
      throw IoError(IoError::Kind::malformed_header, "dtype", "dtype must be f32 or u8");
    out.raw = h.at("raw").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "header", e.what());
  }
  if (out.raw.is_relative()) out.raw = header_path.parent_path() / out.raw;
  return out;
}

void write_header(const json& h, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io_failure, "header", "cannot open " + path.string());
  out << h.dump(2) << "\n";
  if (!out) throw IoError(IoError::Kind::io_failure, "header", "short write to " + path.string());
}

}  // namespace

void write_volume(const Volume& v, const fs::path& header_path) {
  if (v.size() != static_cast<std::int64_t>(v.data.size()))
    throw std::invalid_argument("write_volume: data length does not match dims x channels");
  const fs::path raw = raw_path_for(header_path);
  write_header(header_json(v.dims, v.channels, v.spacing_mm, "f32", raw.filename()),
               header_path);
  write_bytes(raw, v.data.data(), v.data.size() * sizeof(float));
}

Volume read_volume(const fs::path& header_path) {
  const Header h = parse_header(header_path);
  if (h.dtype != "f32")
    throw IoError(IoError::Kind::malformed_header, "dtype",
                  "expected dtype f32, got " + h.dtype + " in " + header_path.string());
  Volume v(h.dims, h.channels, h.spacing);
  const auto bytes = read_bytes(h.raw, "raw");
  if (bytes.size() != v.data.size() * sizeof(float))
    throw IoError(IoError::Kind::length_mismatch, "raw",
                  "raw length " + std::to_string(bytes.size()) + " != expected " +
                      std::to_string(v.data.size() * sizeof(float)) + " for " +
                      header_path.string());
  std::memcpy(v.data.data(), bytes.data(), bytes.size());
  return v;
}

void write_labels(const LabelVolume& labels, const fs::path& header_path) {
  labels.validate_classes();
  const fs::path raw = raw_path_for(header_path);
  write_header(header_json(labels.dims, 1, labels.spacing_mm, "u8", raw.filename()),
               header_path);
  write_bytes(raw, labels.data.data(), labels.data.size());
}

LabelVolume read_labels(const fs::path& header_path) {
  const Header h = parse_header(header_path);
  if (h.dtype != "u8")
    throw IoError(IoError::Kind::malformed_header, "dtype",
                  "expected dtype u8, got " + h.dtype + " in " + header_path.string());
  if (h.channels != 1)
    throw IoError(IoError::Kind::malformed_header, "channels", "label volumes are single-channel");
  LabelVolume labels(h.dims, h.spacing);
  const auto bytes = read_bytes(h.raw, "raw");
  if (bytes.size() != labels.data.size())
    throw IoError(IoError::Kind::length_mismatch, "raw",
                  "raw length " + std::to_string(bytes.size()) + " != expected " +
                      std::to_string(labels.data.size()) + " for " + header_path.string());
  std::memcpy(labels.data.data(), bytes.data(), bytes.size());
  labels.validate_classes();
  return labels;
}

void write_image(const Image2D& img, const fs::path& header_path) {
  Volume v({img.rows, img.cols, 1}, 1, {img.pixel_mm, img.pixel_mm, img.pixel_mm});
  std::copy(img.data.begin(), img.data.end(), v.data.begin());
  write_volume(v, header_path);
}

Image2D read_image(const fs::path& header_path) {
  const Volume v = read_volume(header_path);
  if (v.dims.d2 != 1 || v.channels != 1)
    throw IoError(IoError::Kind::malformed_header, "dims",
                  "image volumes must have dims (rows, cols, 1) and one channel");
  if (v.spacing_mm[0] != v.spacing_mm[1])
    throw IoError(IoError::Kind::malformed_header, "spacing_mm",
                  "image pixels must be square");
  Image2D img(v.dims.d0, v.dims.d1, v.spacing_mm[0]);
  std::copy(v.data.begin(), v.data.end(), img.data.begin());
  return img;
}

void write_pgm(const Image2D& img, const fs::path& path) {
  const auto [lo_it, hi_it] = std::minmax_element(img.data.begin(), img.data.end());
  const float lo = *lo_it, hi = *hi_it;
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround((img.data[i] - lo) * scale));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io_failure, "pgm", "cannot open " + path.string());
  out << "P5\n" << img.cols << " " << img.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoError::Kind::io_failure, "pgm", "short write to " + path.string());
}

void write_mesh_obj(const Mesh& mesh, const fs::path& path) {
  mesh.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io_failure, "obj", "cannot open " + path.string());
  out << "# class " << mesh.class_id << " (" << bone_name(mesh.class_id) << ")\n";
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v[0], v[1], v[2]);
    out << buf;
  }
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  if (!out) throw IoError(IoError::Kind::io_failure, "obj", "short write to " + path.string());
}

Mesh read_mesh_obj(const fs::path& path, int class_id) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::missing_file, "obj", "missing file " + path.string());
  Mesh mesh;
  mesh.class_id = class_id;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      std::array<double, 3> v{};
      ls >> v[0] >> v[1] >> v[2];
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      ls >> t[0] >> t[1] >> t[2];
      mesh.triangles.push_back({t[0] - 1, t[1] - 1, t[2] - 1});
    }
  }
  mesh.validate();
  return mesh;
}

}  // namespace xrec
