#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "fgm/analytic.hpp"
#include "fgm/autodiff.hpp"
#include "fgm/data.hpp"
#include "fgm/fdiv.hpp"
#include "fgm/models.hpp"

// Monte Carlo estimators of the joint objective
//   L^M_f = E_{p* x q}[ f'(e^r) ] - E_{p_theta}[ f*(f'(e^r)) ],
//   r(x, z) = log p_eta(x) + log q(z|x) - log p_theta(x, z),
// and of the oracle quantities it is compared against in tests.

namespace fgm::objective {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using fdiv::Kernel;

/// Non-owning view of the three models and the store holding their values.
struct ModelView {
  const ad::ParameterStore& store;
  const models::GenerativeModel& gen;
  const models::Posterior& inf;
  const models::DensityModel& est;
};

struct ObjectiveEstimate {
  double term1 = 0.0;
  double term2 = 0.0;
  double total = 0.0;  ///< term1 - term2
  Eigen::Index n_samples = 0;
  double se_term1 = 0.0;
  double se_term2 = 0.0;

  double combined_se() const { return std::sqrt(se_term1 * se_term1 + se_term2 * se_term2); }
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Sample mean and its standard error (unbiased variance).
MeanSe mean_and_se(const Vector& values);

/// Exogenous noise for one evaluation of the objective with batch size K.
struct ObjectiveNoise {
  Matrix q_noise;  ///< K x z_dim, reparameterizes z ~ q(.|x_data)
  Matrix z_gen;    ///< K x z_dim, prior draws
  Matrix x_noise;  ///< K x x_dim, reparameterizes x ~ p(.|z_gen)

  static ObjectiveNoise draw(Eigen::Index k, int x_dim, int z_dim, Rng& rng);
};

/// Log ratio on the tape, one entry per row of (x, z).
ad::Var log_ratio(ad::Tape& tape, const ModelView& view, ad::Var x, ad::Var z);
double log_ratio(const ModelView& view, const Vector& x, const Vector& z);

/// f'(e^r) and f*(f'(e^r)) as tape expressions in r.
ad::Var composite_t1(const Kernel& kernel, ad::Var r);
ad::Var composite_t2(const Kernel& kernel, ad::Var r);

struct ObjectiveGraph {
  ad::Var total;
  ad::Var term1;
  ad::Var term2;
  ad::Var r_data;  ///< K x 1
  ad::Var r_gen;   ///< K x 1
};

/// The differentiable batch estimate used by training. Data pairs take
/// z = rsample(q(.|x), q_noise); generated pairs take x = rsample(p(.|z_gen),
/// x_noise). Throws NumericalError naming the first non-finite sample.
ObjectiveGraph build_objective(ad::Tape& tape, const Kernel& kernel, const ModelView& view, const Matrix& x_data,
                               const ObjectiveNoise& noise);

/// Per-sample log ratios of data pairs and of as many generated pairs.
struct LogRatios {
  Vector data;
  Vector gen;
};

LogRatios sample_log_ratios(const ModelView& view, const Matrix& x_data, Rng& rng);
ObjectiveEstimate lm_from_log_ratios(const Kernel& kernel, const LogRatios& ratios);

/// Value-only estimate over any number of data rows (evaluated in chunks).
ObjectiveEstimate estimate_LM(const Kernel& kernel, const ModelView& view, const Matrix& x_data, Rng& rng);

/// Log ratios against the true density:
///   r* = log p*(x) + log q(z|x) - log p_theta(x, z).
LogRatios sample_true_log_ratios(const ModelView& view, const data::TargetDensity& pstar, Eigen::Index n_per_side,
                                 Rng& rng);

/// D_f(p* x q || p_theta) from r* drawn half under p_theta (gen) and half
/// under p* x q (data): mean_gen f(e^r)/(1+e^r) + mean_data f(e^r)/(1+e^r).
MeanSe lv_from_log_ratios(const Kernel& kernel, const LogRatios& ratios);

/// The f-VAE objective, n samples in total. Needs the exact density of p*.
MeanSe estimate_LV(const Kernel& kernel, const ModelView& view, const data::TargetDensity& pstar, Eigen::Index n,
                   Rng& rng);

/// KL(p* || p_eta) over n draws from p*.
MeanSe estimate_KL_target(const models::DensityModel& est, const ad::ParameterStore& store,
                          const data::TargetDensity& pstar, Eigen::Index n, Rng& rng);

/// r(x) = log p_eta(x) - log p_theta(x) under p* (data) and under the
/// closed-form generator marginal (gen), n draws each.
LogRatios sample_marginal_log_ratios(const analytic::LinearGaussianSpec& spec, const models::DensityModel& est,
                                     const ad::ParameterStore& store, const data::TargetDensity& pstar,
                                     Eigen::Index n, Rng& rng);

/// f-GAN objective with the induced discriminator T(x) = f'(p_eta(x) / p_theta(x)),
/// where p_theta is the closed-form marginal of a linear-Gaussian generator;
/// n draws from each side.
ObjectiveEstimate estimate_LG(const Kernel& kernel, const analytic::LinearGaussianSpec& spec,
                              const models::DensityModel& est, const ad::ParameterStore& store,
                              const data::TargetDensity& pstar, Eigen::Index n, Rng& rng);

struct IdentityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double se = 0.0;  ///< standard error of lhs - rhs

  double gap() const { return lhs - rhs; }
};

/// KL kernel: lhs = L^M, rhs = L^V - KL(p* || p_eta), independent samples.
IdentityCheck kl_decoupling_check(const ModelView& view, const data::TargetDensity& pstar, Eigen::Index n, Rng& rng);

/// lhs = L^M with q replaced by the exact posterior of the generator,
/// rhs = L^G; n draws per side for each.
IdentityCheck fgan_equality_check(const Kernel& kernel, const analytic::LinearGaussianSpec& spec,
                                  const ad::ParameterStore& store, const models::GenerativeModel& gen,
                                  const models::DensityModel& est, const data::TargetDensity& pstar, Eigen::Index n,
                                  Rng& rng);

}  // namespace fgm::objective
