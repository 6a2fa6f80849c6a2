// xrec: phantom generation, DRR rendering, dataset building, training,
// reconstruction, evaluation and the gradient-check harness in one CLI.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xrec/dataset.hpp"
#include "xrec/gradcheck.hpp"
#include "xrec/io.hpp"
#include "xrec/marching_cubes.hpp"
#include "xrec/mesh_sampling.hpp"
#include "xrec/metrics.hpp"
#include "xrec/parallel.hpp"
#include "xrec/phantom.hpp"
#include "xrec/rng.hpp"
#include "xrec/projection.hpp"
#include "xrec/reconstruct.hpp"
#include "xrec/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cmd_phantom_gen(int count, int size, std::uint64_t seed, const fs::path& out) {
  fs::create_directories(out);
  for (int i = 0; i < count; ++i) {
    xrec::PhantomSpec spec;
    spec.size = size;
    spec.seed = xrec::mix_seed(seed, static_cast<std::uint64_t>(i));
    const xrec::PhantomCase c = xrec::generate_phantom(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "case_%04d", i);
    xrec::write_volume(c.intensity, out / (std::string(name) + ".intensity.json"));
    xrec::write_labels(c.labels, out / (std::string(name) + ".labels.json"));
    std::cout << name << ": size " << size << " seed " << spec.seed << "\n";
  }
  return 0;
}

int cmd_drr_render(const fs::path& volume, const std::string& axis, const std::string& mode,
                   const fs::path& out, const fs::path& pgm) {
  const xrec::Volume v = xrec::read_volume(volume);
  const auto view = axis == "ap" ? xrec::ViewAxis::ap : xrec::ViewAxis::lat;
  const auto m = mode == "mean" ? xrec::DrrMode::mean : xrec::DrrMode::attenuation;
  const xrec::Image2D img = xrec::render_drr(v, view, m);
  xrec::write_image(img, out);
  if (!pgm.empty()) xrec::write_pgm(img, pgm);
  std::cout << "rendered " << axis << " " << mode << " " << img.rows << "x" << img.cols
            << " -> " << out.string() << "\n";
  return 0;
}

int cmd_dataset_build(const xrec::DatasetBuildConfig& cfg) {
  const xrec::DatasetManifest manifest = xrec::dataset_build(cfg);
  std::cout << "built " << manifest.cases.size() << " cases (" << cfg.count << " phantoms x "
            << (cfg.augmentations + 1) << " poses) in " << cfg.out_dir.string() << "\n";
  return 0;
}

int cmd_train(const fs::path& config_path) {
  const xrec::TrainConfig cfg = xrec::load_train_config(config_path);
  const xrec::TrainResult result = xrec::train(cfg);
  for (const auto& e : result.log)
    std::printf("epoch %3d  lr %.1e  loss %.5f  (ce %.5f, reconst %.5f)  val dice %.4f\n",
                e.epoch, e.lr, e.mean_train_loss, e.mean_ce, e.mean_reconst,
                e.val_mean_bone_dice);
  std::cout << "best epoch " << result.best_epoch << "; wrote "
            << (cfg.out_dir / "model_best.json").string() << "\n";
  return 0;
}

int cmd_reconstruct(const fs::path& model_path, const fs::path& ap_path,
                    const fs::path& lat_path, const fs::path& out) {
  const xrec::ModelParams model = xrec::load_model(model_path);
  const xrec::Image2D ap = xrec::read_image(ap_path);
  const xrec::Image2D lat = xrec::read_image(lat_path);
  const xrec::ReconstructResult result = xrec::reconstruct(model, ap, lat);
  xrec::write_reconstruction(result, out);
  std::printf("timing: epipolar %.1f ms, forward %.1f ms, argmax %.1f ms, meshing %.1f ms, "
              "total %.1f ms\n",
              result.timing.epipolar_ms, result.timing.forward_ms, result.timing.argmax_ms,
              result.timing.meshing_ms, result.timing.total_ms);
  return 0;
}

struct ClassScore {
  double dice3d = 0.0;
  double chamfer_mm = 0.0;
  bool failed = false;
};

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report_path,
             int chamfer_samples) {
  std::vector<fs::path> gt_files;
  for (const auto& entry : fs::directory_iterator(gt_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == ".labels.json")
      gt_files.push_back(entry.path());
  }
  std::sort(gt_files.begin(), gt_files.end());
  if (gt_files.empty()) throw std::runtime_error("eval: no *.labels.json files in " +
                                                 gt_dir.string());

  json cases = json::array();
  std::array<double, 4> sum_dice{}, sum_chamfer{};
  std::array<int, 4> n_dice{}, n_chamfer{};

  for (const auto& gt_path : gt_files) {
    const std::string fname = gt_path.filename().string();
    const std::string case_id = fname.substr(0, fname.size() - 12);
    fs::path pred_path = pred_dir / fname;
    if (!fs::exists(pred_path)) pred_path = pred_dir / case_id / "labels.json";
    if (!fs::exists(pred_path))
      throw xrec::IoError(xrec::IoError::Kind::missing_file, "pred",
                          "no prediction found for " + case_id);

    const xrec::LabelVolume gt = xrec::read_labels(gt_path);
    const xrec::LabelVolume pred = xrec::read_labels(pred_path);
    const auto pred_meshes = xrec::extract_bones(pred);

    std::vector<xrec::GtMask2D> gt_masks;
    for (int k = 1; k <= 4; ++k)
      for (auto view : {xrec::ViewAxis::ap, xrec::ViewAxis::lat})
        gt_masks.push_back({k, view, xrec::project_mask(gt, k, view)});
    const auto records = xrec::evaluate_2d(pred, gt_masks);

    json jclasses = json::array();
    double case_dice = 0.0, case_chamfer = 0.0;
    int case_chamfer_n = 0;
    for (int k = 1; k <= 4; ++k) {
      ClassScore score;
      score.dice3d = xrec::dice(pred, gt, k);

      std::vector<std::array<double, 3>> pred_pts;
      if (chamfer_samples > 0)
        pred_pts = xrec::sample_mesh_points(pred_meshes[k - 1], chamfer_samples, 17);
      else
        pred_pts = pred_meshes[k - 1].vertices;
      const auto gt_pts = xrec::surface_points_mm(gt, k);
      if (pred_pts.empty() || gt_pts.empty()) {
        score.failed = true;
      } else {
        score.chamfer_mm = xrec::chamfer(pred_pts, gt_pts);
      }

      json views;
      for (auto view : {xrec::ViewAxis::ap, xrec::ViewAxis::lat})
        for (const auto& r : records)
          if (r.class_id == k && r.view == view)
            views[xrec::view_name(view)] = {
                {"dice2d", r.dice2d},
                {"chamfer2d_mm", r.chamfer_failed ? json() : json(r.chamfer2d_mm)}};

      jclasses.push_back({{"class", k},
                          {"name", xrec::bone_name(k)},
                          {"dice3d", score.dice3d},
                          {"chamfer_mm", score.failed ? json() : json(score.chamfer_mm)},
                          {"failed", score.failed},
                          {"views", views}});
      case_dice += score.dice3d;
      sum_dice[k - 1] += score.dice3d;
      n_dice[k - 1] += 1;
      if (!score.failed) {
        case_chamfer += score.chamfer_mm;
        case_chamfer_n += 1;
        sum_chamfer[k - 1] += score.chamfer_mm;
        n_chamfer[k - 1] += 1;
      }
    }
    cases.push_back({{"id", case_id},
                     {"classes", jclasses},
                     {"bone_avg_dice3d", case_dice / 4.0},
                     {"bone_avg_chamfer_mm",
                      case_chamfer_n ? json(case_chamfer / case_chamfer_n) : json()}});
  }

  json per_class;
  double overall_dice = 0.0, overall_chamfer = 0.0;
  int chamfer_classes = 0;
  for (int k = 1; k <= 4; ++k) {
    const double d = sum_dice[k - 1] / std::max(1, n_dice[k - 1]);
    per_class[xrec::bone_name(k)] = {
        {"dice3d", d},
        {"chamfer_mm", n_chamfer[k - 1] ? json(sum_chamfer[k - 1] / n_chamfer[k - 1]) : json()}};
    overall_dice += d;
    if (n_chamfer[k - 1]) {
      overall_chamfer += sum_chamfer[k - 1] / n_chamfer[k - 1];
      ++chamfer_classes;
    }
  }

  json report;
  report["cases"] = cases;
  report["overall"] = {
      {"per_class", per_class},
      {"bones_average",
       {{"dice3d", overall_dice / 4.0},
        {"chamfer_mm", chamfer_classes ? json(overall_chamfer / chamfer_classes) : json()}}}};

  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw xrec::IoError(xrec::IoError::Kind::io_failure, "report",
                                "cannot open " + report_path.string());
  out << report.dump(2) << "\n";
  std::cout << "bones average dice3d " << overall_dice / 4.0 << " over " << gt_files.size()
            << " cases -> " << report_path.string() << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const fs::path& report_path,
                  const std::string& mutate) {
  const xrec::GradCheckReport report = xrec::gradcheck(seed, mutate);
  for (const auto& e : report.entries)
    std::printf("%-22s max rel err %.3e  %s\n", e.op.c_str(), e.max_rel_err,
                e.pass ? "pass" : "FAIL");
  if (!report_path.empty()) xrec::write_gradcheck_report(report, report_path);
  return report.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D knee-bone reconstruction from bi-planar projections"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = hardware)");

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "procedural phantom tools");
  auto* gen = phantom->add_subcommand("gen", "generate phantoms with labels");
  int gen_count = 1, gen_size = 32;
  std::uint64_t gen_seed = 1;
  fs::path gen_out;
  gen->add_option("--count", gen_count, "number of phantoms");
  gen->add_option("--size", gen_size, "voxels per side");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // drr render
  auto* drr = app.add_subcommand("drr", "projection tools");
  auto* render = drr->add_subcommand("render", "render a DRR from a volume");
  fs::path drr_volume, drr_out, drr_pgm;
  std::string drr_axis = "ap", drr_mode = "mean";
  render->add_option("--volume", drr_volume, "input volume header")->required();
  render->add_option("--axis", drr_axis, "ap|lat")->check(CLI::IsMember({"ap", "lat"}));
  render->add_option("--mode", drr_mode, "mean|atten")->check(CLI::IsMember({"mean", "atten"}));
  render->add_option("--out", drr_out, "output image header")->required();
  render->add_option("--pgm", drr_pgm, "optional PGM preview path");

  // dataset build
  auto* dataset = app.add_subcommand("dataset", "training data tools");
  auto* build = dataset->add_subcommand("build", "phantoms + DWMs + DRR pairs + manifest");
  xrec::DatasetBuildConfig ds;
  build->add_option("--count", ds.count, "number of phantoms");
  build->add_option("--aug", ds.augmentations, "augmented copies per phantom");
  build->add_option("--size", ds.size, "voxels per side");
  build->add_option("--seed", ds.seed, "base seed");
  build->add_option("--gamma", ds.dwm.gamma, "DWM gamma");
  build->add_option("--sigma", ds.dwm.sigma, "DWM sigma (voxels)");
  build->add_option("--out", ds.out_dir, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  fs::path train_config;
  train_cmd->add_option("--config", train_config, "TrainConfig JSON")->required();

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "labels + bone meshes from an image pair");
  fs::path rec_model, rec_ap, rec_lat, rec_out;
  rec->add_option("--model", rec_model, "model manifest")->required();
  rec->add_option("--ap", rec_ap, "AP image header")->required();
  rec->add_option("--lat", rec_lat, "LAT image header")->required();
  rec->add_option("--out", rec_out, "output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "3D + projected 2D metrics report");
  fs::path eval_pred, eval_gt, eval_report;
  int chamfer_samples = 0;
  eval_cmd->add_option("--pred", eval_pred, "prediction directory")->required();
  eval_cmd->add_option("--gt", eval_gt, "ground-truth directory")->required();
  eval_cmd->add_option("--report", eval_report, "output JSON report")->required();
  eval_cmd->add_option("--chamfer-samples", chamfer_samples,
                       "surface samples per mesh (0 = raw vertices)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t gc_seed = 1;
  fs::path gc_report;
  std::string gc_mutate;
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--report", gc_report, "output JSON report");
  gc->add_option("--mutate", gc_mutate, "fault-injection hook: op name to corrupt");

  CLI11_PARSE(app, argc, argv);
  xrec::set_thread_count(threads);

  try {
    if (gen->parsed()) return cmd_phantom_gen(gen_count, gen_size, gen_seed, gen_out);
    if (render->parsed()) return cmd_drr_render(drr_volume, drr_axis, drr_mode, drr_out, drr_pgm);
    if (build->parsed()) return cmd_dataset_build(ds);
    if (train_cmd->parsed()) return cmd_train(train_config);
    if (rec->parsed()) return cmd_reconstruct(rec_model, rec_ap, rec_lat, rec_out);
    if (eval_cmd->parsed()) return cmd_eval(eval_pred, eval_gt, eval_report, chamfer_samples);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_report, gc_mutate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}
