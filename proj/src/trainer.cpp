#include "fgm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace fgm::trainer {

namespace {

std::size_t group_index(ad::Group g) { return static_cast<std::size_t>(g); }

struct GroupGrads {
  std::array<std::vector<Matrix*>, ad::kNumGroups> params;
  std::array<std::vector<Matrix>, ad::kNumGroups> grads;
  std::array<double, ad::kNumGroups> norm{};
};

GroupGrads split_by_group(ad::ParameterStore& store, std::vector<Matrix> grads) {
  GroupGrads out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ad::ParamId id{i};
    const std::size_t g = group_index(store[id].group);
    out.params[g].push_back(&store.value(id));
    out.norm[g] += grads[i].squaredNorm();
    out.grads[g].push_back(std::move(grads[i]));
  }
  for (double& n : out.norm) n = std::sqrt(n);
  return out;
}

void clip(GroupGrads& gg, double clip_norm) {
  if (clip_norm <= 0.0) return;
  for (std::size_t g = 0; g < ad::kNumGroups; ++g) {
    if (gg.norm[g] > clip_norm) {
      const double s = clip_norm / gg.norm[g];
      for (Matrix& m : gg.grads[g]) m *= s;
    }
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Epoch-shuffled minibatches over a fixed set of row indices.
class BatchSampler {
 public:
  BatchSampler(std::vector<Eigen::Index> rows, Eigen::Index k, Rng& rng)
      : rows_(std::move(rows)), k_(k), rng_(rng) {
    shuffle();
  }

  Matrix next(const Matrix& data) {
    if (cursor_ + k_ > static_cast<Eigen::Index>(rows_.size())) shuffle();
    Matrix batch(k_, data.cols());
    for (Eigen::Index i = 0; i < k_; ++i) batch.row(i) = data.row(rows_[static_cast<std::size_t>(cursor_ + i)]);
    cursor_ += k_;
    return batch;
  }

 private:
  void shuffle() {
    std::shuffle(rows_.begin(), rows_.end(), rng_);
    cursor_ = 0;
  }

  std::vector<Eigen::Index> rows_;
  Eigen::Index k_;
  Rng& rng_;
  Eigen::Index cursor_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  fdiv::parse_kernel(kernel);
  if (T < 0) fail("T must be >= 0");
  if (K < 1) fail("K must be >= 1");
  if (!(lr_theta_phi > 0.0) || !(lr_eta > 0.0)) fail("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
  if (eta_steps_per_iter < 1) fail("eta_steps_per_iter must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in [0, 1)");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be >= 0");
  if (n_eval_samples < 1) fail("n_eval_samples must be >= 1");
}

void adam_step(AdamState& state, const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               const AdamHyper& hyper, Direction direction) {
  if (params.size() != grads.size()) throw StructuralError("adam_step: parameter and gradient counts differ");
  if (state.t == 0 && state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw StructuralError("adam_step: state does not match the parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols() ||
        state.m[i].rows() != params[i]->rows() || state.m[i].cols() != params[i]->cols()) {
      throw StructuralError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  const double sign = direction == Direction::Descent ? -1.0 : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grads[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grads[i].cwiseAbs2();
    const auto m_hat = state.m[i].array() / c1;
    const auto v_hat = state.v[i].array() / c2;
    params[i]->array() += sign * hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
  }
}

JointModel make_joint_model(const ModelConfig& config, int x_dim, Rng& rng) {
  if (x_dim < 1 || config.z_dim < 1) throw ConfigError("model: dimensions must be >= 1");
  JointModel m;
  m.gen = models::GenerativeModel(m.store, rng, x_dim, config.z_dim, config.gen_hidden);
  m.inf = models::InferenceModel(m.store, rng, x_dim, config.z_dim, config.inf_hidden);
  m.est = models::make_density_estimator(m.store, rng, x_dim, config.density);
  return m;
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string s = std::to_string(row.iter);
  for (double v : {row.lm_total, row.term1, row.term2, row.logp_eta_holdout}) s += "," + fmt(v);
  s += ",";
  if (row.mode_coverage) s += fmt(*row.mode_coverage);
  for (double v : {row.gnorm_theta, row.gnorm_phi, row.gnorm_eta, row.wall_ms}) s += "," + fmt(v);
  return s;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

TrainResult train(const TrainConfig& config, const Matrix& dataset, ad::ParameterStore& store,
                  const models::GenerativeModel& gen, const models::Posterior& inf, const models::DensityModel& est,
                  const data::GaussianMixture* pstar, const TrainHooks& hooks) {
  config.validate();
  const fdiv::Kernel kernel = fdiv::parse_kernel(config.kernel);
  if (dataset.cols() != gen.x_dim()) throw StructuralError("train: dataset dimension does not match the generator");
  if (!dataset.allFinite()) throw DomainError("train: dataset contains non-finite values");

  Rng master(config.seed);
  Rng data_rng = split(master);
  Rng noise_rng = split(master);
  Rng eval_rng = split(master);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(dataset.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), data_rng);
  const auto n_holdout = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(dataset.rows())));
  Matrix holdout(static_cast<Eigen::Index>(n_holdout), dataset.cols());
  for (std::size_t i = 0; i < n_holdout; ++i) holdout.row(static_cast<Eigen::Index>(i)) = dataset.row(order[i]);
  std::vector<Eigen::Index> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_holdout), order.end());
  if (static_cast<Eigen::Index>(train_rows.size()) < config.K) {
    throw ConfigError("train: training split has " + std::to_string(train_rows.size()) +
                      " rows, fewer than the batch size K = " + std::to_string(config.K));
  }
  if (config.holdout_fraction > 0.0 && n_holdout == 0) {
    throw ConfigError("train: holdout_fraction leaves an empty holdout set");
  }
  BatchSampler batches(std::move(train_rows), config.K, data_rng);

  const objective::ModelView view{store, gen, inf, est};
  const AdamHyper hyper_tp{config.lr_theta_phi, config.beta1, config.beta2, config.eps};
  const AdamHyper hyper_eta{config.lr_eta, config.beta1, config.beta2, config.eps};
  std::array<AdamState, ad::kNumGroups> adam;
  TrainResult result;
  const auto start = std::chrono::steady_clock::now();

  std::vector<Matrix> last_good;
  auto snapshot = [&] {
    last_good.clear();
    for (const auto& p : store.parameters()) last_good.push_back(p.value);
  };
  auto abort = [&](long iter, const std::string& why) {
    for (std::size_t i = 0; i < last_good.size(); ++i) store.value(ad::ParamId{i}) = last_good[i];
    if (hooks.on_checkpoint) hooks.on_checkpoint(store, iter);
    throw TrainingAborted("training aborted at iteration " + std::to_string(iter) + ": " + why, iter, result.rows);
  };

  // One objective evaluation plus backward; returns the graph values and split gradients.
  struct Step {
    double total, term1, term2;
    GroupGrads grads;
  };
  auto evaluate = [&](long iter) -> Step {
    const Matrix x = batches.next(dataset);
    const auto noise = objective::ObjectiveNoise::draw(config.K, gen.x_dim(), gen.z_dim(), noise_rng);
    try {
      ad::Tape tape(store);
      const auto g = objective::build_objective(tape, kernel, view, x, noise);
      if (!std::isfinite(g.total.scalar())) abort(iter, "non-finite objective");
      tape.backward(g.total);
      Step s{g.total.scalar(), g.term1.scalar(), g.term2.scalar(), split_by_group(store, tape.param_gradients())};
      for (std::size_t k = 0; k < ad::kNumGroups; ++k) {
        if (!std::isfinite(s.grads.norm[k])) {
          abort(iter, "non-finite gradient for group " + std::string(ad::group_name(static_cast<ad::Group>(k))));
        }
      }
      return s;
    } catch (const TrainingAborted&) {
      throw;
    } catch (const NumericalError& e) {
      abort(iter, e.what());
    } catch (const DomainError& e) {
      abort(iter, e.what());
    }
    throw StructuralError("unreachable");
  };
  auto apply = [&](GroupGrads& gg, ad::Group g, const AdamHyper& h, Direction d) {
    const std::size_t k = group_index(g);
    if (gg.params[k].empty()) return;
    adam_step(adam[k], gg.params[k], gg.grads[k], h, d);
    ++result.adam_steps[k];
  };

  for (long iter = 1; iter <= config.T; ++iter) {
    snapshot();
    for (int j = 1; j < config.eta_steps_per_iter && config.update_eta; ++j) {
      Step s = evaluate(iter);
      clip(s.grads, config.clip_norm);
      apply(s.grads, ad::Group::Eta, hyper_eta, Direction::Ascent);
    }
    Step s = evaluate(iter);
    const std::array<double, ad::kNumGroups> norms = s.grads.norm;
    clip(s.grads, config.clip_norm);
    if (config.update_theta) apply(s.grads, ad::Group::Theta, hyper_tp, Direction::Descent);
    if (config.update_phi) apply(s.grads, ad::Group::Phi, hyper_tp, Direction::Descent);
    if (config.update_eta) apply(s.grads, ad::Group::Eta, hyper_eta, Direction::Ascent);
    for (const auto& p : store.parameters()) {
      if (!p.value.allFinite()) abort(iter, "parameter " + p.name + " became non-finite");
    }
    result.iterations = iter;

    if (iter % config.eval_every == 0 || iter == config.T) {
      MetricsRow row;
      row.iter = iter;
      row.lm_total = s.total;
      row.term1 = s.term1;
      row.term2 = s.term2;
      if (holdout.rows() > 0) {
        row.logp_eta_holdout = models::density_log_prob(est, store, holdout).mean();
      } else {
        row.logp_eta_holdout = std::numeric_limits<double>::quiet_NaN();
      }
      if (pstar != nullptr) {
        const Matrix samples = gen.sample(store, config.n_eval_samples, eval_rng);
        row.mode_coverage = data::mode_coverage(*pstar, samples).covered;
      }
      row.gnorm_theta = norms[group_index(ad::Group::Theta)];
      row.gnorm_phi = norms[group_index(ad::Group::Phi)];
      row.gnorm_eta = norms[group_index(ad::Group::Eta)];
      if (config.record_wall_time) {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      }
      if (holdout.rows() > 0 && !std::isfinite(row.logp_eta_holdout)) abort(iter, "non-finite holdout log density");
      result.rows.push_back(row);
      if (hooks.on_row) hooks.on_row(row);
      if (hooks.on_checkpoint) hooks.on_checkpoint(store, iter);
    }
  }
  return result;
}

TrainResult train(const TrainConfig& config, const Matrix& dataset, JointModel& model,
                  const data::GaussianMixture* pstar, const TrainHooks& hooks) {
  return train(config, dataset, model.store, model.gen, model.inf, *model.est, pstar, hooks);
}

CollapseReport diagnose_collapse(const std::vector<MetricsRow>& rows, std::size_t window, double threshold) {
  if (window < 2) throw DomainError("diagnose_collapse: window must be >= 2");
  CollapseReport report;
  for (const auto& r : rows) {
    if (r.mode_coverage) report.coverage.emplace_back(r.iter, *r.mode_coverage);
  }
  bool in_run = false;
  for (std::size_t i = window - 1; i < rows.size(); ++i) {
    const MetricsRow& a = rows[i + 1 - window];
    const MetricsRow& b = rows[i];
    const double drop = a.logp_eta_holdout - b.logp_eta_holdout;
    const double change = std::abs(b.term2 - a.term2);
    const bool flag = drop > threshold && change <= threshold;
    if (flag && !in_run) report.events.push_back({i, b.iter, drop, change});
    in_run = flag;
  }
  return report;
}

}  // namespace fgm::trainer
