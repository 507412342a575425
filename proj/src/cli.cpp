#include "fgm/cli.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "fgm/io.hpp"

namespace fgm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Eigen::Index kFinalSamples = 5000;
constexpr Eigen::Index kGridSize = 128;
constexpr std::size_t kCollapseWindow = 4;

// Independent streams derived from the run seed, in a fixed order.
struct Streams {
  Rng data;
  Rng model;
  Rng sample;
  std::uint64_t train_seed;

  explicit Streams(std::uint64_t seed) : data(0), model(0), sample(0), train_seed(0) {
    Rng master(seed);
    data = split(master);
    model = split(master);
    sample = split(master);
    train_seed = master();
  }
};

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

std::string checkpoint_bytes(const ad::ParameterStore& store) {
  std::ostringstream out(std::ios::binary);
  store.save(out);
  return out.str();
}

std::string metrics_text(const std::vector<trainer::MetricsRow>& rows) {
  std::ostringstream out;
  trainer::write_metrics_csv(out, rows);
  return out.str();
}

json row_json(const trainer::MetricsRow& r) {
  json j = {{"iter", r.iter},           {"lm_total", r.lm_total},   {"term1", r.term1},
            {"term2", r.term2},         {"logp_eta_holdout", r.logp_eta_holdout},
            {"gnorm_theta", r.gnorm_theta}, {"gnorm_phi", r.gnorm_phi}, {"gnorm_eta", r.gnorm_eta}};
  j["mode_coverage"] = r.mode_coverage ? json(*r.mode_coverage) : json(nullptr);
  return j;
}

json coverage_json(const data::ModeCoverage& c) {
  return {{"covered", c.covered},
          {"per_mode_fraction",
           std::vector<double>(c.per_mode_fraction.data(), c.per_mode_fraction.data() + c.per_mode_fraction.size())},
          {"high_quality_fraction", c.high_quality_fraction}};
}

json collapse_json(const trainer::CollapseReport& r) {
  json events = json::array();
  for (const auto& e : r.events) {
    events.push_back({{"row", e.row}, {"iter", e.iter}, {"holdout_drop", e.holdout_drop},
                      {"term2_change", e.term2_change}});
  }
  json coverage = json::array();
  for (const auto& [iter, c] : r.coverage) coverage.push_back({iter, c});
  return {{"window", kCollapseWindow}, {"collapsed", r.collapsed()}, {"events", events}, {"coverage", coverage}};
}

std::string density_grid_csv(const models::DensityModel& est, const ad::ParameterStore& store,
                             const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd lo = x.colwise().minCoeff().array() - 1.0;
  const Eigen::RowVectorXd hi = x.colwise().maxCoeff().array() + 1.0;
  Eigen::MatrixXd grid(kGridSize * kGridSize, 2);
  for (Eigen::Index i = 0; i < kGridSize; ++i) {
    for (Eigen::Index j = 0; j < kGridSize; ++j) {
      const double t0 = static_cast<double>(i) / static_cast<double>(kGridSize - 1);
      const double t1 = static_cast<double>(j) / static_cast<double>(kGridSize - 1);
      grid(i * kGridSize + j, 0) = lo(0) + t0 * (hi(0) - lo(0));
      grid(i * kGridSize + j, 1) = lo(1) + t1 * (hi(1) - lo(1));
    }
  }
  Eigen::MatrixXd out(grid.rows(), 3);
  out.leftCols(2) = grid;
  out.col(2) = models::density_log_prob(est, store, grid);
  return io::matrix_to_csv(out, {"x0", "x1", "logp"});
}

std::shared_ptr<const data::TargetDensity> load_sidecar(const fs::path& csv_path,
                                                        std::shared_ptr<const data::GaussianMixture>& mixture) {
  fs::path sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (!fs::exists(sidecar)) return nullptr;
  json j;
  try {
    j = json::parse(io::read_file(sidecar));
  } catch (const json::parse_error& e) {
    throw ConfigError(sidecar.string() + ": invalid JSON: " + e.what());
  }
  const std::string type = j.value("type", "");
  if (type == "gaussian_mixture") {
    mixture = std::make_shared<const data::GaussianMixture>(data::mixture_from_json(j));
    return mixture;
  }
  if (type == "linear_gaussian") return std::make_shared<const analytic::MarginalDensity>(config::spec_from_json(j));
  throw ConfigError(sidecar.string() + ": unknown sidecar type \"" + type + "\"");
}

}  // namespace

Dataset load_dataset(const config::RunConfig& config) {
  Streams streams(config.seed);
  Dataset ds;
  if (const auto* ring = std::get_if<config::RingData>(&config.data)) {
    ds.mixture = std::make_shared<const data::GaussianMixture>(data::ring_mixture(ring->n_modes, ring->radius, ring->std));
    ds.pstar = ds.mixture;
    ds.x = ds.mixture->sample(ring->n, streams.data);
  } else if (const auto* lg = std::get_if<config::LinearGaussianData>(&config.data)) {
    ds.pstar = std::make_shared<const analytic::MarginalDensity>(lg->spec);
    ds.x = ds.pstar->sample(lg->n, streams.data);
  } else {
    const auto& csv = std::get<config::CsvData>(config.data);
    ds.x = io::read_csv_matrix(csv.path);
    ds.pstar = load_sidecar(csv.path, ds.mixture);
    if (ds.pstar && ds.pstar->dim() != ds.x.cols()) {
      throw ConfigError("sidecar dimension does not match " + csv.path.string());
    }
  }
  return ds;
}

int cmd_gen_data(const config::RunConfig& config) {
  if (std::holds_alternative<config::CsvData>(config.data)) {
    throw ConfigError("gen-data needs a synthetic data.type (ring or linear_gaussian)");
  }
  const Dataset ds = load_dataset(config);
  io::write_file_atomic(config.out_dir / "data.csv", io::matrix_to_csv(ds.x, io::coordinate_header(ds.x.cols())));
  json sidecar;
  if (ds.mixture) {
    sidecar = data::to_json(*ds.mixture);
  } else {
    sidecar = config::spec_to_json(std::get<config::LinearGaussianData>(config.data).spec);
  }
  write_json(config.out_dir / "data.json", sidecar);
  std::printf("wrote %ld rows to %s\n", static_cast<long>(ds.x.rows()), (config.out_dir / "data.csv").c_str());
  return kOk;
}

int cmd_train(const config::RunConfig& config) {
  const Dataset ds = load_dataset(config);
  Streams streams(config.seed);
  trainer::TrainConfig tc = config.train;
  tc.seed = streams.train_seed;
  trainer::JointModel model = trainer::make_joint_model(config.model, static_cast<int>(ds.x.cols()), streams.model);

  const fs::path metrics_path = config.out_dir / "metrics.csv";
  const fs::path checkpoint_path = config.out_dir / "checkpoint.fgm";
  std::vector<trainer::MetricsRow> rows;
  trainer::TrainHooks hooks;
  hooks.on_row = [&](const trainer::MetricsRow& row) {
    rows.push_back(row);
    io::write_file_atomic(metrics_path, metrics_text(rows));
  };
  hooks.on_checkpoint = [&](const ad::ParameterStore& store, long) {
    io::write_file_atomic(checkpoint_path, checkpoint_bytes(store));
  };

  json summary = {{"kernel", config.kernel}, {"seed", config.seed}, {"T", tc.T}, {"K", tc.K}};
  trainer::TrainResult result;
  try {
    result = trainer::train(tc, ds.x, model, ds.mixture.get(), hooks);
  } catch (const trainer::TrainingAborted& e) {
    io::write_file_atomic(metrics_path, metrics_text(e.rows()));
    summary["aborted"] = {{"iteration", e.iteration()}, {"message", e.what()}};
    write_json(config.out_dir / "summary.json", summary);
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumerical;
  }
  io::write_file_atomic(metrics_path, metrics_text(result.rows));
  io::write_file_atomic(checkpoint_path, checkpoint_bytes(model.store));

  const Eigen::MatrixXd samples = model.gen.sample(model.store, kFinalSamples, streams.sample);
  io::write_file_atomic(config.out_dir / "samples_final.csv",
                        io::matrix_to_csv(samples, io::coordinate_header(samples.cols())));
  if (ds.pstar && ds.x.cols() == 2) {
    io::write_file_atomic(config.out_dir / "density_grid.csv", density_grid_csv(*model.est, model.store, ds.x));
  }

  summary["iterations"] = result.iterations;
  summary["adam_steps"] = {{"theta", result.adam_steps[0]}, {"phi", result.adam_steps[1]},
                           {"eta", result.adam_steps[2]}};
  summary["final"] = result.rows.empty() ? json(nullptr) : row_json(result.rows.back());
  if (ds.mixture) summary["final_samples_coverage"] = coverage_json(data::mode_coverage(*ds.mixture, samples));
  if (result.rows.size() >= kCollapseWindow) {
    summary["collapse"] = collapse_json(trainer::diagnose_collapse(result.rows, kCollapseWindow));
  }
  write_json(config.out_dir / "summary.json", summary);
  std::printf("trained %ld iterations; outputs in %s\n", result.iterations, config.out_dir.c_str());
  return kOk;
}

int cmd_check(const config::RunConfig& config) {
  const auto* lg = std::get_if<config::LinearGaussianData>(&config.data);
  if (lg == nullptr) throw ConfigError("check needs data.type = linear_gaussian");
  const checks::CheckReport report = checks::run_checks(lg->spec, config.check);
  json j = report.to_json();
  j["seed"] = config.seed;
  write_json(config.out_dir / "check_report.json", j);
  for (const auto& f : report.fenchel) std::printf("fenchel %-10s %s\n", f.kernel.c_str(), f.passed ? "pass" : "fail");
  for (const auto& c : report.checks) {
    std::printf("%-14s %-10s %s (%d/%d, need %d)\n", c.name.c_str(), c.kernel.c_str(),
                std::string(checks::status_name(c.status)).c_str(), c.passed, c.total, c.required);
  }
  return report.any_failed() ? kCheckFailed : kOk;
}

int cmd_eval(const config::RunConfig& config, const std::optional<fs::path>& checkpoint) {
  const fs::path ckpt = checkpoint.value_or(config.out_dir / "checkpoint.fgm");
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint " + ckpt.string() + " does not exist");
  const Dataset ds = load_dataset(config);
  Streams streams(config.seed);
  trainer::JointModel model = trainer::make_joint_model(config.model, static_cast<int>(ds.x.cols()), streams.model);
  {
    std::istringstream in(io::read_file(ckpt), std::ios::binary);
    try {
      model.store.assign_from(ad::ParameterStore::load(in));
    } catch (const StructuralError& e) {
      throw ConfigError(std::string("checkpoint does not match the model config: ") + e.what());
    }
  }
  const fdiv::Kernel kernel = fdiv::parse_kernel(config.kernel);
  Rng rng = split(streams.sample);
  const auto lm = objective::estimate_LM(kernel, model.view(), ds.x, rng);
  json j = {{"kernel", config.kernel},
            {"checkpoint", ckpt.string()},
            {"n_data", ds.x.rows()},
            {"lm_total", lm.total},
            {"term1", lm.term1},
            {"term2", lm.term2},
            {"se_term1", lm.se_term1},
            {"se_term2", lm.se_term2},
            {"logp_eta_data", models::density_log_prob(*model.est, model.store, ds.x).mean()}};
  if (ds.pstar) {
    const auto kl = objective::estimate_KL_target(*model.est, model.store, *ds.pstar, ds.x.rows(), rng);
    j["kl_pstar_peta"] = {{"value", kl.mean}, {"se", kl.se}};
    const auto lv = objective::estimate_LV(kernel, model.view(), *ds.pstar, std::max<Eigen::Index>(4, ds.x.rows()), rng);
    j["lv"] = {{"value", lv.mean}, {"se", lv.se}};
  }
  if (ds.mixture) {
    const Eigen::MatrixXd samples = model.gen.sample(model.store, config.train.n_eval_samples, rng);
    j["mode_coverage"] = coverage_json(data::mode_coverage(*ds.mixture, samples));
  }
  write_json(config.out_dir / "eval.json", j);
  std::printf("lm_total %.6g (se %.3g)\n", lm.total, lm.combined_se());
  return kOk;
}

int report_error(const std::exception& e) {
  std::fprintf(stderr, "error: %s\n", e.what());
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const StructuralError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e)) {
    return kUsage;
  }
  return kNumerical;
}

}  // namespace fgm::cli
