#include "xrec/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "xrec/io.hpp"
#include "xrec/losses.hpp"
#include "xrec/metrics.hpp"
#include "xrec/parallel.hpp"
#include "xrec/projection.hpp"
#include "xrec/rng.hpp"

namespace xrec {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct LoadedCase {
  std::string id;
  Volume input;  // 2-channel epipolar volume
  LabelVolume labels;
  Volume dwm;
  Image2D ap, lat;
};

LoadedCase load_case(const CaseRecord& rec, const TrainConfig& cfg) {
  LoadedCase c;
  c.id = rec.id;
  c.ap = read_image(rec.ap);
  c.lat = read_image(rec.lat);
  if (c.ap.rows != cfg.arch.input_side)
    throw std::invalid_argument("train: case " + rec.id + " image side " +
                                std::to_string(c.ap.rows) + " != arch input_side " +
                                std::to_string(cfg.arch.input_side));
  c.input = build_epipolar_volume(c.ap, c.lat);
  c.labels = read_labels(rec.labels);
  if (c.labels.dims != c.input.dims)
    throw std::invalid_argument("train: case " + rec.id + " labels/image dims mismatch");
  if (cfg.use_dwm) {
    c.dwm = fs::exists(rec.dwm) ? read_volume(rec.dwm) : compute_dwm(c.labels, cfg.dwm);
    if (c.dwm.dims != c.labels.dims || c.dwm.channels != 1)
      throw std::invalid_argument("train: case " + rec.id + " dwm dims mismatch");
  } else {
    c.dwm = Volume(c.labels.dims, 1, c.labels.spacing_mm);
    std::fill(c.dwm.data.begin(), c.dwm.data.end(), 1.0f);
  }
  return c;
}

void write_log(const TrainConfig& cfg, const TrainResult& result, const fs::path& path) {
  json j;
  j["seed"] = cfg.seed;
  j["epochs"] = json::array();
  for (const auto& e : result.log)
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"lr", e.lr},
                           {"mean_train_loss", e.mean_train_loss},
                           {"mean_ce", e.mean_ce},
                           {"mean_reconst", e.mean_reconst},
                           {"val_mean_bone_dice", e.val_mean_bone_dice}});
  j["best_epoch"] = result.best_epoch;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::io_failure, "log", "cannot open " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

void TrainConfig::validate() const {
  arch.validate();
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (split.train < 1 || split.val < 1 || split.test < 1)
    throw std::invalid_argument("TrainConfig: split sizes must each be >= 1");
  if (ce_weight < 0.0 || reconstruction_weight < 0.0)
    throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
  dwm.validate();
}

TrainConfig load_train_config(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in)
    throw IoError(IoError::Kind::missing_file, "config", "missing file " + json_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "json", e.what());
  }

  TrainConfig cfg;
  try {
    const auto& a = j.at("arch");
    cfg.arch.input_side = a.at("input_side").get<int>();
    cfg.arch.levels = a.value("levels", cfg.arch.levels);
    cfg.arch.base_channels = a.value("base_channels", cfg.arch.base_channels);
    cfg.arch.in_channels = a.value("in_channels", cfg.arch.in_channels);
    cfg.arch.num_classes = a.value("num_classes", cfg.arch.num_classes);
    cfg.epochs = j.value("epochs", cfg.epochs);
    if (j.contains("lr")) {
      cfg.lr.initial = j["lr"].value("initial", cfg.lr.initial);
      cfg.lr.decay_factor = j["lr"].value("decay_factor", cfg.lr.decay_factor);
      cfg.lr.decay_every_epochs = j["lr"].value("decay_every_epochs", cfg.lr.decay_every_epochs);
    }
    if (j.contains("dwm")) {
      cfg.dwm.gamma = j["dwm"].value("gamma", cfg.dwm.gamma);
      cfg.dwm.sigma = j["dwm"].value("sigma", cfg.dwm.sigma);
    }
    if (j.contains("loss")) {
      cfg.ce_weight = j["loss"].value("ce_weight", cfg.ce_weight);
      cfg.reconstruction_weight =
          j["loss"].value("reconstruction_weight", cfg.reconstruction_weight);
    }
    cfg.dataset_manifest =
        json_path.parent_path() / j.at("dataset_manifest").get<std::string>();
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("split")) {
      cfg.split.train = j["split"].value("train", cfg.split.train);
      cfg.split.val = j["split"].value("val", cfg.split.val);
      cfg.split.test = j["split"].value("test", cfg.split.test);
    }
    cfg.use_dwm = j.value("use_dwm", cfg.use_dwm);
    cfg.use_reconstruction_loss =
        j.value("use_reconstruction_loss", cfg.use_reconstruction_loss);
    cfg.out_dir = json_path.parent_path() / j.at("out_dir").get<std::string>();
    cfg.threads = j.value("threads", cfg.threads);
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::malformed_header, "config", e.what());
  }
  cfg.validate();
  return cfg;
}

double mean_bone_dice(const LabelVolume& pred, const LabelVolume& gt) {
  double acc = 0.0;
  for (int k = 1; k <= 4; ++k) acc += dice(pred, gt, k);
  return acc / 4.0;
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  if (config.threads > 0) set_thread_count(config.threads);
  fs::create_directories(config.out_dir);

  const DatasetManifest manifest = load_manifest(config.dataset_manifest);
  int phantoms = 0;
  for (const auto& c : manifest.cases) phantoms = std::max(phantoms, c.phantom_index + 1);
  const int needed = config.split.train + config.split.val + config.split.test;
  if (phantoms < needed)
    throw std::invalid_argument("train: dataset has " + std::to_string(phantoms) +
                                " phantoms, split needs " + std::to_string(needed));

  std::vector<LoadedCase> train_cases, val_cases;
  for (const auto& rec : manifest.cases) {
    if (rec.phantom_index < config.split.train)
      train_cases.push_back(load_case(rec, config));
    else if (rec.phantom_index < config.split.train + config.split.val)
      val_cases.push_back(load_case(rec, config));
    // remaining phantoms form the held-out test split; never touched here
  }

  TrainResult result;
  ModelParams params = init_params<float>(config.arch, config.seed);
  AdamState<float> adam = AdamState<float>::init(params);
  adam.schedule = config.lr;
  Rng shuffle_rng(mix_seed(config.seed, 0x5u));

  double best_dice = -1.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr.at_epoch(epoch);

    std::vector<std::size_t> order(train_cases.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    double sum_loss = 0.0, sum_ce = 0.0, sum_rec = 0.0;
    for (std::size_t idx : order) {
      const LoadedCase& c = train_cases[idx];
      Tape<float> tape;
      const Volume prob = forward(config.arch, params, c.input, &tape);

      // gradients enter below the softmax: the fused CE form stays finite
      // where float probabilities underflow (see weighted_ce_logit_grad)
      double loss, ce, rec;
      Grid3<float> grad_z = weighted_ce_logit_grad(prob, c.labels, c.dwm);
      ce = weighted_cross_entropy<float>(prob, c.labels, c.dwm);
      if (config.use_reconstruction_loss) {
        Grid3<float> g_rec(prob.dims, prob.channels, prob.spacing_mm);
        rec = reconstruction_loss(prob, c.ap, c.lat, &g_rec);
        loss = config.ce_weight * ce + config.reconstruction_weight * rec;
        for (float& v : g_rec.data) v *= static_cast<float>(config.reconstruction_weight);
        const Grid3<float> gz_rec = softmax_backward(prob, g_rec);
        for (std::int64_t i = 0; i < grad_z.size(); ++i)
          grad_z.data[i] = static_cast<float>(config.ce_weight * grad_z.data[i]) +
                           gz_rec.data[i];
      } else {
        rec = 0.0;
        loss = ce;  // ablation contract: the loss is exactly the CE term
      }

      if (!std::isfinite(loss)) {
        // params are still the pre-step values: save them and bail out
        save_model(params, config.out_dir / "model_final.json");
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " case " + c.id + "; last good checkpoint saved");
      }

      const Params<float> grads = backward_from_logits(config.arch, params, tape, grad_z);
      adam_step(params, grads, adam, lr);
      sum_loss += loss;
      sum_ce += ce;
      sum_rec += rec;
    }

    double val_dice = 0.0;
    for (const auto& c : val_cases) {
      const Volume prob = forward<float>(config.arch, params, c.input, nullptr);
      val_dice += mean_bone_dice(argmax_labels(prob), c.labels);
    }
    val_dice /= static_cast<double>(val_cases.size());

    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.mean_train_loss = sum_loss / static_cast<double>(train_cases.size());
    e.mean_ce = sum_ce / static_cast<double>(train_cases.size());
    e.mean_reconst = sum_rec / static_cast<double>(train_cases.size());
    e.val_mean_bone_dice = val_dice;
    result.log.push_back(e);

    if (val_dice > best_dice) {
      best_dice = val_dice;
      result.best_params = params;
      result.best_epoch = epoch;
    }
  }

  result.final_params = params;
  save_model(result.final_params, config.out_dir / "model_final.json");
  save_model(result.best_params, config.out_dir / "model_best.json");
  write_log(config, result, config.out_dir / "train_log.json");
  return result;
}

}  // namespace xrec
