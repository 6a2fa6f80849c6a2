#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xrec/dwm.hpp"
#include "xrec/phantom.hpp"

namespace xrec {

struct DatasetBuildConfig {
  int count = 4;          // number of phantoms
  int augmentations = 0;  // extra rotated copies per phantom
  int size = 32;
  std::uint64_t seed = 1;
  DwmParams dwm;
  PhantomSpec phantom;  // template; size and seed are set per case
  std::filesystem::path out_dir;
};

struct CaseRecord {
  std::string id;
  int phantom_index = 0;
  int augmentation_index = 0;  // 0 = original pose
  std::uint64_t phantom_seed = 0;
  std::optional<std::array<double, 3>> angles_deg;
  std::filesystem::path intensity, labels, dwm, ap, lat;  // header paths
};

struct DatasetManifest {
  int size = 0;
  std::uint64_t seed = 0;
  int count = 0;
  int augmentations = 0;
  DwmParams dwm;
  std::vector<CaseRecord> cases;  // ordered by (phantom, augmentation)
};

/// Generates phantoms, augmented copies, per-case distance weight maps and
/// AP/LAT mean-mode DRRs; writes everything plus manifest.json into out_dir.
DatasetManifest dataset_build(const DatasetBuildConfig& config);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Loads and verifies that every referenced artifact exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace xrec
