#include "xrec/dataset.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "xrec/io.hpp"
#include "xrec/projection.hpp"
#include "xrec/rng.hpp"

namespace xrec {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string case_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", index);
  return buf;
}

}  // namespace

DatasetManifest dataset_build(const DatasetBuildConfig& config) {
  if (config.count < 1) throw std::invalid_argument("dataset_build: count must be >= 1");
  if (config.augmentations < 0)
    throw std::invalid_argument("dataset_build: augmentations must be >= 0");
  fs::create_directories(config.out_dir);

  DatasetManifest manifest;
  manifest.size = config.size;
  manifest.seed = config.seed;
  manifest.count = config.count;
  manifest.augmentations = config.augmentations;
  manifest.dwm = config.dwm;

  int case_index = 0;
  for (int p = 0; p < config.count; ++p) {
    PhantomSpec spec = config.phantom;
    spec.size = config.size;
    spec.seed = mix_seed(config.seed, static_cast<std::uint64_t>(p));
    const PhantomCase base = generate_phantom(spec);

    for (int a = 0; a <= config.augmentations; ++a, ++case_index) {
      CaseRecord rec;
      rec.id = case_name(case_index);
      rec.phantom_index = p;
      rec.augmentation_index = a;
      rec.phantom_seed = spec.seed;

      const Volume* intensity = &base.intensity;
      const LabelVolume* labels = &base.labels;
      AugmentedCase aug;
      if (a > 0) {
        aug = augment_case(base.intensity, base.labels,
                           mix_seed(spec.seed, static_cast<std::uint64_t>(a)));
        rec.angles_deg = aug.angles_deg;
        intensity = &aug.intensity;
        labels = &aug.labels;
      }

      const Volume dwm = compute_dwm(*labels, config.dwm);
      const Image2D ap = render_drr(*intensity, ViewAxis::ap, DrrMode::mean);
      const Image2D lat = render_drr(*intensity, ViewAxis::lat, DrrMode::mean);

      rec.intensity = config.out_dir / (rec.id + ".intensity.json");
      rec.labels = config.out_dir / (rec.id + ".labels.json");
      rec.dwm = config.out_dir / (rec.id + ".dwm.json");
      rec.ap = config.out_dir / (rec.id + ".ap.json");
      rec.lat = config.out_dir / (rec.id + ".lat.json");
      write_volume(*intensity, rec.intensity);
      write_labels(*labels, rec.labels);
      write_volume(dwm, rec.dwm);
      write_image(ap, rec.ap);
      write_image(lat, rec.lat);
      manifest.cases.push_back(std::move(rec));
    }
  }
  save_manifest(manifest, config.out_dir / "manifest.json");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json j;
  j["size"] = manifest.size;
  j["seed"] = manifest.seed;
  j["count"] = manifest.count;
  j["augmentations"] = manifest.augmentations;
  j["dwm"] = {{"gamma", manifest.dwm.gamma}, {"sigma", manifest.dwm.sigma}};
  auto cases = json::array();
  for (const auto& c : manifest.cases) {
    json jc;
    jc["id"] = c.id;
    jc["phantom_index"] = c.phantom_index;
    jc["augmentation_index"] = c.augmentation_index;
    jc["phantom_seed"] = c.phantom_seed;
    if (c.angles_deg)
      jc["angles_deg"] = {(*c.angles_deg)[0], (*c.angles_deg)[1], (*c.angles_deg)[2]};
    else
      jc["angles_deg"] = nullptr;
    jc["intensity"] = c.intensity.filename().string();
    jc["labels"] = c.labels.filename().string();
    jc["dwm"] = c.dwm.filename().string();
    jc["ap"] = c.ap.filename().string();
    jc["lat"] = c.lat.filename().string();
    cases.push_back(std::move(jc));
  }
  j["cases"] = std::move(cases);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io_failure, "manifest", "cannot open " + path.string());
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::missing_file, "manifest", "missing file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "json", e.what());
  }

  DatasetManifest manifest;
  const fs::path dir = path.parent_path();
  try {
    manifest.size = j.at("size").get<int>();
    manifest.seed = j.at("seed").get<std::uint64_t>();
    manifest.count = j.at("count").get<int>();
    manifest.augmentations = j.at("augmentations").get<int>();
    manifest.dwm.gamma = j.at("dwm").at("gamma").get<double>();
    manifest.dwm.sigma = j.at("dwm").at("sigma").get<double>();
    for (const auto& jc : j.at("cases")) {
      CaseRecord c;
      c.id = jc.at("id").get<std::string>();
      c.phantom_index = jc.at("phantom_index").get<int>();
      c.augmentation_index = jc.at("augmentation_index").get<int>();
      c.phantom_seed = jc.at("phantom_seed").get<std::uint64_t>();
      if (!jc.at("angles_deg").is_null()) {
        const auto& a = jc.at("angles_deg");
        c.angles_deg = std::array<double, 3>{a[0].get<double>(), a[1].get<double>(),
                                             a[2].get<double>()};
      }
      c.intensity = dir / jc.at("intensity").get<std::string>();
      c.labels = dir / jc.at("labels").get<std::string>();
      c.dwm = dir / jc.at("dwm").get<std::string>();
      c.ap = dir / jc.at("ap").get<std::string>();
      c.lat = dir / jc.at("lat").get<std::string>();
      manifest.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "cases", e.what());
  }

  for (const auto& c : manifest.cases)
    for (const auto* p : {&c.intensity, &c.labels, &c.dwm, &c.ap, &c.lat})
      if (!fs::exists(*p))
        throw IoError(IoError::Kind::missing_file, "cases",
                      "manifest references missing file " + p->string());
  return manifest;
}

}  // namespace xrec
