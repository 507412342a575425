#include "fgm/config.hpp"

#include <algorithm>

#include "fgm/io.hpp"

namespace fgm::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_object(const json& j, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
}

void allow_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  require_object(j, section);
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
      std::string valid;
      for (const char* k : keys) valid += (valid.empty() ? "" : ", ") + std::string(k);
      throw ConfigError(section + ": unknown key \"" + key + "\" (valid: " + valid + ")");
    }
  }
}

template <typename T>
void read(const json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

template <typename T>
T require(const json& j, const std::string& section, const char* key) {
  if (!j.contains(key)) throw ConfigError(section + ": missing required key \"" + key + "\"");
  T out{};
  read(j, section, key, out);
  return out;
}

Eigen::Index read_count(const json& j, const std::string& section, const char* key, Eigen::Index fallback) {
  long long v = fallback;
  read(j, section, key, v);
  return static_cast<Eigen::Index>(v);
}

DataConfig parse_data(const json& j, const fs::path& base_dir) {
  require_object(j, "data");
  const auto type = require<std::string>(j, "data", "type");
  if (type == "ring") {
    allow_keys(j, "data", {"type", "n_modes", "radius", "std", "n"});
    RingData d;
    read(j, "data", "n_modes", d.n_modes);
    read(j, "data", "radius", d.radius);
    read(j, "data", "std", d.std);
    d.n = read_count(j, "data", "n", d.n);
    if (d.n_modes < 2 || !(d.radius > 0.0) || !(d.std > 0.0)) {
      throw ConfigError("data: ring needs n_modes >= 2, radius > 0, std > 0");
    }
    if (d.n < 1) throw ConfigError("data.n must be >= 1");
    return d;
  }
  if (type == "csv") {
    allow_keys(j, "data", {"type", "path"});
    CsvData d;
    d.path = require<std::string>(j, "data", "path");
    if (d.path.is_relative() && !base_dir.empty()) d.path = base_dir / d.path;
    if (!fs::exists(d.path)) throw ConfigError("data.path: " + d.path.string() + " does not exist");
    return d;
  }
  if (type == "linear_gaussian") {
    allow_keys(j, "data", {"type", "A", "b", "sigma", "n"});
    LinearGaussianData d;
    json spec = {{"A", require<json>(j, "data", "A")},
                 {"b", require<json>(j, "data", "b")},
                 {"sigma", require<json>(j, "data", "sigma")}};
    d.spec = spec_from_json(spec);
    d.n = read_count(j, "data", "n", d.n);
    if (d.n < 1) throw ConfigError("data.n must be >= 1");
    return d;
  }
  throw ConfigError("data.type: unknown type \"" + type + "\" (valid: ring, csv, linear_gaussian)");
}

trainer::ModelConfig parse_model(const json& j) {
  allow_keys(j, "model", {"z_dim", "gen_hidden", "inf_hidden", "flow_hidden", "n_flow_layers", "mixture_components"});
  trainer::ModelConfig m;
  read(j, "model", "z_dim", m.z_dim);
  read(j, "model", "gen_hidden", m.gen_hidden);
  read(j, "model", "inf_hidden", m.inf_hidden);
  read(j, "model", "flow_hidden", m.density.flow_hidden);
  read(j, "model", "n_flow_layers", m.density.n_flow_layers);
  read(j, "model", "mixture_components", m.density.mixture_components);
  auto positive = [](const std::vector<int>& v) { return std::all_of(v.begin(), v.end(), [](int w) { return w > 0; }); };
  if (m.z_dim < 1) throw ConfigError("model.z_dim must be >= 1");
  if (!positive(m.gen_hidden) || !positive(m.inf_hidden) || !positive(m.density.flow_hidden)) {
    throw ConfigError("model: hidden widths must be positive");
  }
  if (m.density.n_flow_layers < 1 || m.density.mixture_components < 1) {
    throw ConfigError("model: n_flow_layers and mixture_components must be >= 1");
  }
  return m;
}

trainer::TrainConfig parse_train(const json& j) {
  allow_keys(j, "train",
             {"T", "K", "lr_theta_phi", "lr_eta", "beta1", "beta2", "eps", "eta_steps_per_iter", "eval_every",
              "holdout_fraction", "clip_norm", "n_eval_samples", "record_wall_time"});
  trainer::TrainConfig t;
  read(j, "train", "T", t.T);
  t.K = read_count(j, "train", "K", t.K);
  read(j, "train", "lr_theta_phi", t.lr_theta_phi);
  read(j, "train", "lr_eta", t.lr_eta);
  read(j, "train", "beta1", t.beta1);
  read(j, "train", "beta2", t.beta2);
  read(j, "train", "eps", t.eps);
  read(j, "train", "eta_steps_per_iter", t.eta_steps_per_iter);
  read(j, "train", "eval_every", t.eval_every);
  read(j, "train", "holdout_fraction", t.holdout_fraction);
  read(j, "train", "clip_norm", t.clip_norm);
  t.n_eval_samples = read_count(j, "train", "n_eval_samples", t.n_eval_samples);
  read(j, "train", "record_wall_time", t.record_wall_time);
  return t;
}

checks::CheckOptions parse_check(const json& j) {
  allow_keys(j, "check",
             {"n_bound", "n_identity", "bound_configs", "bound_required", "identity_configs", "identity_required",
              "k_stationarity", "n_stationarity", "min_n"});
  checks::CheckOptions c;
  c.n_bound = read_count(j, "check", "n_bound", c.n_bound);
  c.n_identity = read_count(j, "check", "n_identity", c.n_identity);
  read(j, "check", "bound_configs", c.bound_configs);
  read(j, "check", "bound_required", c.bound_required);
  read(j, "check", "identity_configs", c.identity_configs);
  read(j, "check", "identity_required", c.identity_required);
  c.k_stationarity = read_count(j, "check", "k_stationarity", c.k_stationarity);
  c.n_stationarity = read_count(j, "check", "n_stationarity", c.n_stationarity);
  c.min_n = read_count(j, "check", "min_n", c.min_n);
  if (c.n_bound < 4 || c.n_identity < 4 || c.k_stationarity < 1 || c.n_stationarity < 4) {
    throw ConfigError("check: sample counts must be >= 4 (k_stationarity >= 1)");
  }
  if (c.bound_configs < 1 || c.identity_configs < 1 || c.bound_required < 0 || c.identity_required < 0 ||
      c.bound_required > c.bound_configs || c.identity_required > c.identity_configs) {
    throw ConfigError("check: config counts must be >= 1 and required counts within them");
  }
  return c;
}

}  // namespace

nlohmann::json spec_to_json(const analytic::LinearGaussianSpec& spec) {
  json a = json::array();
  for (Eigen::Index r = 0; r < spec.A.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(spec.A.cols()));
    for (Eigen::Index c = 0; c < spec.A.cols(); ++c) row[static_cast<std::size_t>(c)] = spec.A(r, c);
    a.push_back(row);
  }
  return {{"type", "linear_gaussian"},
          {"A", a},
          {"b", std::vector<double>(spec.b.data(), spec.b.data() + spec.b.size())},
          {"sigma", spec.sigma}};
}

analytic::LinearGaussianSpec spec_from_json(const nlohmann::json& j) {
  analytic::LinearGaussianSpec spec;
  try {
    const auto rows = j.at("A").get<std::vector<std::vector<double>>>();
    const auto b = j.at("b").get<std::vector<double>>();
    spec.sigma = j.at("sigma").get<double>();
    if (rows.empty() || rows.front().empty()) throw ConfigError("A must be a nonempty matrix");
    spec.A.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw ConfigError("A: rows have different lengths");
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        spec.A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    spec.b = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("linear_gaussian spec: ") + e.what());
  }
  try {
    spec.validate();
    analytic::marginal_covariance(spec);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir) {
  allow_keys(j, "config", {"kernel", "seed", "out_dir", "data", "model", "train", "check"});
  RunConfig c;
  read(j, "config", "kernel", c.kernel);
  fdiv::parse_kernel(c.kernel);
  read(j, "config", "seed", c.seed);
  if (j.contains("out_dir")) {
    c.out_dir = require<std::string>(j, "config", "out_dir");
    if (c.out_dir.is_relative() && !base_dir.empty()) c.out_dir = base_dir / c.out_dir;
  }
  if (!j.contains("data")) throw ConfigError("config: missing required key \"data\"");
  c.data = parse_data(j.at("data"), base_dir);
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("check")) c.check = parse_check(j.at("check"));
  apply_overrides(c, std::nullopt, std::nullopt);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

void apply_overrides(RunConfig& config, const std::optional<std::uint64_t>& seed,
                     const std::optional<fs::path>& out_dir) {
  if (seed) config.seed = *seed;
  if (out_dir) config.out_dir = *out_dir;
  config.train.kernel = config.kernel;
  config.train.seed = config.seed;
  config.check.seed = config.seed;
  config.train.validate();
}

}  // namespace fgm::config
