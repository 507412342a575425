#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <variant>

#include "fgm/analytic.hpp"
#include "fgm/checks.hpp"
#include "fgm/trainer.hpp"

// Strict JSON run configuration. Every object rejects keys it does not know.

namespace fgm::config {

struct RingData {
  int n_modes = 8;
  double radius = 2.0;
  double std = 0.05;
  Eigen::Index n = 10000;
};

struct CsvData {
  std::filesystem::path path;
};

struct LinearGaussianData {
  analytic::LinearGaussianSpec spec;
  Eigen::Index n = 10000;
};

using DataConfig = std::variant<RingData, CsvData, LinearGaussianData>;

struct RunConfig {
  std::string kernel = "kl";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  DataConfig data = RingData{};
  trainer::ModelConfig model;
  trainer::TrainConfig train;
  checks::CheckOptions check;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies command-line overrides and propagates kernel/seed into train.
void apply_overrides(RunConfig& config, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::filesystem::path>& out_dir);

nlohmann::json spec_to_json(const analytic::LinearGaussianSpec& spec);
analytic::LinearGaussianSpec spec_from_json(const nlohmann::json& j);

}  // namespace fgm::config
