#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <vector>

#include "fgm/random.hpp"

namespace fgm::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A data distribution with an exact density and a sampler. Only synthetic
/// targets implement this; training never calls log_prob.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;
  virtual int dim() const = 0;
  /// One log-density per row of x.
  virtual Vector log_prob(const Matrix& x) const = 0;
  virtual Matrix sample(Eigen::Index n, Rng& rng) const = 0;
};

/// Mixture of isotropic Gaussians.
class GaussianMixture final : public TargetDensity {
 public:
  /// Throws DomainError unless weights sum to 1 (1e-12), stds are positive
  /// and all means share one dimension.
  GaussianMixture(Vector weights, std::vector<Vector> means, Vector stds);

  const Vector& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const Vector& stds() const { return stds_; }
  int n_components() const { return static_cast<int>(means_.size()); }

  int dim() const override { return static_cast<int>(means_.front().size()); }
  Vector log_prob(const Matrix& x) const override;
  Matrix sample(Eigen::Index n, Rng& rng) const override;

  friend bool operator==(const GaussianMixture& a, const GaussianMixture& b);

 private:
  Vector weights_;
  std::vector<Vector> means_;
  Vector stds_;
};

Matrix mixture_sample(const GaussianMixture& mix, Eigen::Index n, Rng& rng);
double mixture_log_prob(const GaussianMixture& mix, const Vector& x);

/// Equal-weight modes at radius * (cos 2*pi*j/n, sin 2*pi*j/n).
GaussianMixture ring_mixture(int n_modes, double radius, double std);

struct ModeCoverage {
  int covered = 0;
  Vector per_mode_fraction;  ///< share of samples whose nearest mean is mode j
  double high_quality_fraction = 0.0;
};

/// Nearest-mean assignment. A mode counts as covered when at least
/// max(20, 0.2 * n / n_modes) samples land within 3 std of it.
ModeCoverage mode_coverage(const GaussianMixture& mix, const Matrix& samples);

nlohmann::json to_json(const GaussianMixture& mix);
GaussianMixture mixture_from_json(const nlohmann::json& j);

}  // namespace fgm::data
