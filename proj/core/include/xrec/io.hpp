#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "xrec/grid.hpp"

namespace xrec {

/// IO failures carry a machine-checkable kind plus the offending field.
struct IoError : std::runtime_error {
  enum class Kind { missing_file, length_mismatch, malformed_header, io_failure };

  Kind kind;
  std::string field;

  IoError(Kind k, std::string f, const std::string& msg)
      : std::runtime_error(msg), kind(k), field(std::move(f)) {}
};

// Volume container: a JSON header (dims, channels, spacing_mm, dtype, raw)
// next to a little-endian raw payload. dtype "f32" carries Volume data,
// "u8" carries LabelVolume class ids. The raw filename is the header name
// with its extension replaced by ".raw".

void write_volume(const Volume& v, const std::filesystem::path& header_path);
Volume read_volume(const std::filesystem::path& header_path);

void write_labels(const LabelVolume& labels, const std::filesystem::path& header_path);
LabelVolume read_labels(const std::filesystem::path& header_path);

/// Images are stored as single-channel volumes of dims (rows, cols, 1) with
/// isotropic spacing equal to pixel_mm.
void write_image(const Image2D& img, const std::filesystem::path& header_path);
Image2D read_image(const std::filesystem::path& header_path);

/// 8-bit binary PGM (P5, maxval 255), min-max normalized. Viewing aid only.
void write_pgm(const Image2D& img, const std::filesystem::path& path);

/// ASCII OBJ: one comment line, `v x y z` lines, then 1-based `f a b c` lines.
void write_mesh_obj(const Mesh& mesh, const std::filesystem::path& path);
Mesh read_mesh_obj(const std::filesystem::path& path, int class_id = 0);

}  // namespace xrec
