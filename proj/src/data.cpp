#include "fgm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fgm/errors.hpp"

namespace fgm::data {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;

}  // namespace

GaussianMixture::GaussianMixture(Vector weights, std::vector<Vector> means, Vector stds)
    : weights_(std::move(weights)), means_(std::move(means)), stds_(std::move(stds)) {
  if (means_.empty()) throw DomainError("GaussianMixture: needs at least one component");
  if (weights_.size() != static_cast<Eigen::Index>(means_.size()) ||
      stds_.size() != static_cast<Eigen::Index>(means_.size())) {
    throw DomainError("GaussianMixture: weights, means and stds must have one entry per component");
  }
  if ((weights_.array() < 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-12) {
    throw DomainError("GaussianMixture: weights must be nonnegative and sum to 1");
  }
  if (!(stds_.array() > 0.0).all()) throw DomainError("GaussianMixture: stds must be positive");
  for (const auto& m : means_) {
    if (m.size() != means_.front().size() || m.size() == 0) {
      throw DomainError("GaussianMixture: all means must share one nonzero dimension");
    }
  }
}

Vector GaussianMixture::log_prob(const Matrix& x) const {
  if (x.cols() != dim()) {
    throw StructuralError("mixture_log_prob: expected dimension " + std::to_string(dim()) + ", got " +
                          std::to_string(x.cols()));
  }
  const auto n = x.rows();
  const auto k = static_cast<Eigen::Index>(means_.size());
  const double d = static_cast<double>(dim());
  Matrix comp(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double s = stds_(j);
    const Vector sq = (x.rowwise() - means_[static_cast<std::size_t>(j)].transpose()).rowwise().squaredNorm();
    comp.col(j) = (std::log(weights_(j)) - d * std::log(s) - 0.5 * d * kLog2Pi - 0.5 * sq.array() / (s * s)).matrix();
  }
  const Vector m = comp.rowwise().maxCoeff();
  return m + (comp - m.replicate(1, k)).array().exp().rowwise().sum().log().matrix();
}

Matrix GaussianMixture::sample(Eigen::Index n, Rng& rng) const {
  std::discrete_distribution<int> pick(weights_.data(), weights_.data() + weights_.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = pick(rng);
    for (Eigen::Index c = 0; c < dim(); ++c) {
      out(i, c) = means_[static_cast<std::size_t>(j)](c) + stds_(j) * normal(rng);
    }
  }
  return out;
}

bool operator==(const GaussianMixture& a, const GaussianMixture& b) {
  if (a.weights_ != b.weights_ || a.stds_ != b.stds_ || a.means_.size() != b.means_.size()) return false;
  for (std::size_t j = 0; j < a.means_.size(); ++j) {
    if (a.means_[j] != b.means_[j]) return false;
  }
  return true;
}

Matrix mixture_sample(const GaussianMixture& mix, Eigen::Index n, Rng& rng) { return mix.sample(n, rng); }

double mixture_log_prob(const GaussianMixture& mix, const Vector& x) { return mix.log_prob(x.transpose())(0); }

GaussianMixture ring_mixture(int n_modes, double radius, double std) {
  if (n_modes < 2 || !(radius > 0.0) || !(std > 0.0)) {
    throw DomainError("ring_mixture: needs n_modes >= 2, radius > 0, std > 0");
  }
  std::vector<Vector> means;
  for (int j = 0; j < n_modes; ++j) {
    const double a = 2.0 * std::numbers::pi * j / n_modes;
    Vector m(2);
    m << radius * std::cos(a), radius * std::sin(a);
    means.push_back(m);
  }
  return GaussianMixture(Vector::Constant(n_modes, 1.0 / n_modes), std::move(means), Vector::Constant(n_modes, std));
}

ModeCoverage mode_coverage(const GaussianMixture& mix, const Matrix& samples) {
  if (samples.rows() == 0) throw DomainError("mode_coverage: no samples");
  if (samples.cols() != mix.dim()) throw StructuralError("mode_coverage: dimension mismatch");
  const int k = mix.n_components();
  const auto n = samples.rows();
  std::vector<long> assigned(static_cast<std::size_t>(k), 0);
  std::vector<long> near(static_cast<std::size_t>(k), 0);
  long high_quality = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      const double d = (samples.row(i).transpose() - mix.means()[static_cast<std::size_t>(j)]).norm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    ++assigned[static_cast<std::size_t>(best)];
    if (best_d <= 3.0 * mix.stds()(best)) {
      ++near[static_cast<std::size_t>(best)];
      ++high_quality;
    }
  }
  const double threshold = std::max(20.0, 0.2 * static_cast<double>(n) / k);
  ModeCoverage out;
  out.per_mode_fraction.resize(k);
  for (int j = 0; j < k; ++j) {
    out.per_mode_fraction(j) = static_cast<double>(assigned[static_cast<std::size_t>(j)]) / static_cast<double>(n);
    if (static_cast<double>(near[static_cast<std::size_t>(j)]) >= threshold) ++out.covered;
  }
  out.high_quality_fraction = static_cast<double>(high_quality) / static_cast<double>(n);
  return out;
}

nlohmann::json to_json(const GaussianMixture& mix) {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : mix.means()) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
  return {{"type", "gaussian_mixture"},
          {"weights", std::vector<double>(mix.weights().data(), mix.weights().data() + mix.weights().size())},
          {"means", means},
          {"stds", std::vector<double>(mix.stds().data(), mix.stds().data() + mix.stds().size())}};
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type").get<std::string>() != "gaussian_mixture") {
      throw ConfigError("sidecar does not describe a gaussian_mixture");
    }
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto s = j.at("stds").get<std::vector<double>>();
    std::vector<Vector> means;
    for (const auto& m : j.at("means")) {
      const auto v = m.get<std::vector<double>>();
      means.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    return GaussianMixture(Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())), std::move(means),
                           Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size())));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mixture sidecar: ") + e.what());
  }
}

}  // namespace fgm::data
