#pragma once

#include <Eigen/Dense>

#include "fgm/data.hpp"
#include "fgm/models.hpp"

// Closed forms for the linear-Gaussian model
//   z ~ N(0, I),   x | z ~ N(A z + b, sigma^2 I):
//   marginal   x ~ N(b, A A^T + sigma^2 I)
//   posterior  z | x ~ N(S A^T (x - b) / sigma^2, S),  S = (I + A^T A / sigma^2)^{-1}

namespace fgm::analytic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LinearGaussianSpec {
  Matrix A;  ///< x_dim x z_dim
  Vector b;  ///< x_dim
  double sigma = 1.0;

  int x_dim() const { return static_cast<int>(A.rows()); }
  int z_dim() const { return static_cast<int>(A.cols()); }

  /// Throws DomainError on non-positive sigma, non-finite A, or a b of the
  /// wrong length.
  void validate() const;
};

Matrix marginal_covariance(const LinearGaussianSpec& spec);
double marginal_log_prob(const LinearGaussianSpec& spec, const Vector& x);
Vector marginal_log_prob(const LinearGaussianSpec& spec, const Matrix& x);

/// Full-covariance Gaussian with its lower Cholesky factor.
class Gaussian {
 public:
  Gaussian(Vector mean, Matrix cov);

  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  int dim() const { return static_cast<int>(mean_.size()); }

  double log_prob(const Vector& v) const;
  /// mean + L * noise.
  Vector sample(const Vector& noise) const;

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
};

Matrix posterior_covariance(const LinearGaussianSpec& spec);
Gaussian posterior_params(const LinearGaussianSpec& spec, const Vector& x);

/// The marginal p(x) as a synthetic data target.
class MarginalDensity final : public data::TargetDensity {
 public:
  explicit MarginalDensity(LinearGaussianSpec spec);

  const LinearGaussianSpec& spec() const { return spec_; }
  int dim() const override { return spec_.x_dim(); }
  Vector log_prob(const Matrix& x) const override;
  Matrix sample(Eigen::Index n, Rng& rng) const override;

 private:
  LinearGaussianSpec spec_;
  Matrix chol_;
};

/// Exact posterior z | x as a (parameter-free) inference model.
class ExactPosterior final : public models::Posterior {
 public:
  explicit ExactPosterior(const LinearGaussianSpec& spec);

  int latent_dim() const override { return spec_.z_dim(); }
  ad::Var log_prob(ad::Tape& tape, ad::Var z, ad::Var x) const override;
  ad::Var rsample(ad::Tape& tape, ad::Var x, ad::Var noise) const override;

 private:
  ad::Var mean(ad::Tape& tape, ad::Var x) const;

  LinearGaussianSpec spec_;
  Matrix gain_t_;      ///< (S A^T / sigma^2)^T, so a row x maps to (x - b) gain_t_
  Matrix chol_t_;      ///< L^T
  Matrix chol_inv_t_;  ///< L^{-T}
  double log_det_chol_ = 0.0;
};

/// Generator whose conditional network is the affine map
/// z -> (A z + b, log sigma). Parameters go to theta under `prefix`.
models::GenerativeModel make_generative_model(const LinearGaussianSpec& spec, ad::ParameterStore& store,
                                              const std::string& prefix = "gen");

/// Affine diagonal inference network equal to the exact posterior. Requires
/// A^T A to be diagonal (orthogonal columns of A).
models::InferenceModel make_optimal_inference(const LinearGaussianSpec& spec, ad::ParameterStore& store,
                                              const std::string& prefix = "inf");

/// Two affine coupling layers whose density is exactly N(mean, cov); 2-D only.
models::FlowDensityEstimator make_gaussian_flow(const Vector& mean, const Matrix& cov, ad::ParameterStore& store,
                                                const std::string& prefix = "flow");

/// Random spec whose A has orthogonal columns, so the exact posterior is
/// diagonal and the whole optimum is representable by the trainable models.
LinearGaussianSpec random_orthogonal_spec(Rng& rng, int x_dim, int z_dim);

}  // namespace fgm::analytic
