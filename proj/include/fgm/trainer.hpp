#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fgm/data.hpp"
#include "fgm/objective.hpp"

// The minimax loop: descent on theta and phi, ascent on eta, one backward
// pass per iteration feeding all three groups.

namespace fgm::trainer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct TrainConfig {
  std::string kernel = "kl";
  long T = 20000;
  Eigen::Index K = 256;
  double lr_theta_phi = 1e-3;
  double lr_eta = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  int eta_steps_per_iter = 1;
  std::uint64_t seed = 0;
  long eval_every = 500;
  double holdout_fraction = 0.1;
  /// 0 disables clipping; otherwise each group's gradient norm is capped.
  double clip_norm = 0.0;
  /// Generator draws per evaluation for mode coverage.
  Eigen::Index n_eval_samples = 5000;
  bool update_theta = true;
  bool update_phi = true;
  bool update_eta = true;
  /// wall_ms is written as 0 unless set, so metrics files are reproducible.
  bool record_wall_time = false;

  /// Throws ConfigError on any violated bound.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Adam

enum class Direction { Descent, Ascent };

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long t = 0;
};

/// One bias-corrected Adam update applied to `params` in the given direction.
/// Moments are created as zeros on the first call.
void adam_step(AdamState& state, const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               const AdamHyper& hyper, Direction direction);

// ---------------------------------------------------------------------------
// Models

struct ModelConfig {
  int z_dim = 2;
  std::vector<int> gen_hidden{64, 64};
  std::vector<int> inf_hidden{64, 64};
  models::DensityConfig density;
};

struct JointModel {
  ad::ParameterStore store;
  models::GenerativeModel gen;
  models::InferenceModel inf;
  std::unique_ptr<models::DensityModel> est;

  objective::ModelView view() const { return {store, gen, inf, *est}; }
};

JointModel make_joint_model(const ModelConfig& config, int x_dim, Rng& rng);

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
  long iter = 0;
  double lm_total = 0.0;
  double term1 = 0.0;
  double term2 = 0.0;
  double logp_eta_holdout = 0.0;
  std::optional<double> mode_coverage;
  double gnorm_theta = 0.0;
  double gnorm_phi = 0.0;
  double gnorm_eta = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "iter,lm_total,term1,term2,logp_eta_holdout,mode_coverage,gnorm_theta,gnorm_phi,gnorm_eta,wall_ms";

/// One CSV line (no newline), 9 significant digits.
std::string format_metrics_row(const MetricsRow& row);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_row;
  std::function<void(const ad::ParameterStore&, long iter)> on_checkpoint;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  /// Adam applications per group (theta, phi, eta).
  std::array<long, ad::kNumGroups> adam_steps{};
  long iterations = 0;
};

/// Raised when the loss or a gradient stops being finite. The store passed
/// to train() is restored to its last finite state before this is thrown.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, long iteration, std::vector<MetricsRow> rows)
      : NumericalError(what), iteration_(iteration), rows_(std::move(rows)) {}

  long iteration() const { return iteration_; }
  const std::vector<MetricsRow>& rows() const { return rows_; }

 private:
  long iteration_;
  std::vector<MetricsRow> rows_;
};

/// Runs config.T iterations on `dataset` (one sample per row). `pstar`, when
/// given, is used only for the mode-coverage metric.
TrainResult train(const TrainConfig& config, const Matrix& dataset, ad::ParameterStore& store,
                  const models::GenerativeModel& gen, const models::Posterior& inf, const models::DensityModel& est,
                  const data::GaussianMixture* pstar = nullptr, const TrainHooks& hooks = {});

TrainResult train(const TrainConfig& config, const Matrix& dataset, JointModel& model,
                  const data::GaussianMixture* pstar = nullptr, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Collapse diagnostics

struct CollapseEvent {
  std::size_t row = 0;  ///< index of the first row of a flagged run
  long iter = 0;
  double holdout_drop = 0.0;
  double term2_change = 0.0;
};

struct CollapseReport {
  std::vector<CollapseEvent> events;
  std::vector<std::pair<long, double>> coverage;  ///< (iter, mode_coverage) where known

  bool collapsed() const { return !events.empty(); }
};

/// Flags row i when the holdout log density fell by more than `threshold`
/// over the last `window` rows while |term2| moved by no more than it.
/// Consecutive flagged rows form one event, reported at its first row.
CollapseReport diagnose_collapse(const std::vector<MetricsRow>& rows, std::size_t window, double threshold = 1.0);

}  // namespace fgm::trainer
