#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xrec {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  std::vector<GradCheckEntry> entries;
  bool all_pass = false;
};

/// Central finite-difference verification (64-bit) of every analytic
/// backward pass: conv3d, conv3d_transpose, relu, the softmax+cross-entropy
/// composite, ngcc, project_prediction, reconstruction_loss, total_loss and
/// the whole network. `mutate_op` is a fault-injection hook for testing the
/// harness itself: that op's analytic gradient is perturbed before
/// comparison, which must flip its entry to fail.
GradCheckReport gradcheck(std::uint64_t seed, const std::string& mutate_op = "");

void write_gradcheck_report(const GradCheckReport& report,
                            const std::filesystem::path& path);

}  // namespace xrec
