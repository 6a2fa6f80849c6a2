#pragma once

#include <filesystem>
#include <vector>

#include "xrec/dataset.hpp"
#include "xrec/network.hpp"

namespace xrec {

struct SplitSizes {
  int train = 12, val = 2, test = 4;  // phantoms, not cases
};

struct TrainConfig {
  ArchSpec arch;
  int epochs = 23;
  LrSchedule lr;
  DwmParams dwm;  // used when a case has no stored weight map
  double ce_weight = 0.5;
  double reconstruction_weight = 0.5;
  std::filesystem::path dataset_manifest;
  std::uint64_t seed = 1;
  SplitSizes split;
  bool use_dwm = true;               // off: weight map is identically 1
  bool use_reconstruction_loss = true;  // off: loss is exactly the CE term
  std::filesystem::path out_dir;
  int threads = 0;

  void validate() const;
};

TrainConfig load_train_config(const std::filesystem::path& json_path);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_train_loss = 0.0;
  double mean_ce = 0.0;
  double mean_reconst = 0.0;
  double val_mean_bone_dice = 0.0;
};

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;  // highest validation mean bone Dice
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

/// One case per optimizer step, full pass per epoch, Adam with the scheduled
/// learning rate. Writes model_final.json, model_best.json and
/// train_log.json into out_dir. A non-finite loss saves the last good
/// parameters and aborts.
TrainResult train(const TrainConfig& config);

/// Mean Dice over bone classes 1..4 (empty-empty pairs score 1).
double mean_bone_dice(const LabelVolume& pred, const LabelVolume& gt);

}  // namespace xrec
