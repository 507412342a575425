#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "fgm/config.hpp"

// Subcommand bodies. Each writes its outputs under config.out_dir and
// returns a process exit code; exceptions map to codes in run_command.

namespace fgm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kCheckFailed = 3 };

/// Data set plus whatever is known about its true distribution.
struct Dataset {
  Eigen::MatrixXd x;
  std::shared_ptr<const data::TargetDensity> pstar;    ///< null for plain CSV
  std::shared_ptr<const data::GaussianMixture> mixture;  ///< set when p* is a mixture
};

/// Synthetic data is regenerated from the seed; CSV data is read from disk
/// together with a sibling .json sidecar when one exists.
Dataset load_dataset(const config::RunConfig& config);

int cmd_gen_data(const config::RunConfig& config);
int cmd_train(const config::RunConfig& config);
int cmd_check(const config::RunConfig& config);
/// Recomputes diagnostics from `checkpoint` (default out_dir/checkpoint.fgm).
int cmd_eval(const config::RunConfig& config, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Runs `fn`, reporting exceptions on stderr and mapping them to exit codes.
template <typename F>
int run_command(F&& fn);

int report_error(const std::exception& e);

template <typename F>
int run_command(F&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return report_error(e);
  }
}

}  // namespace fgm::cli
