#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "fgm/analytic.hpp"
#include "fgm/objective.hpp"

// Executable versions of the bound, identity and optimality statements,
// shared by the `check` subcommand and the acceptance binary.

namespace fgm::checks {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Fenchel suite

/// The scalar functions of a kernel, in double and long double. Held as
/// std::function so tests can inject faults.
struct KernelFns {
  std::string name;
  double conj_sup = 0.0;
  std::function<double(double)> f;
  std::function<double(double)> f_prime;
  std::function<double(double)> f_conj;
  std::function<long double(long double)> f_ld;
  std::function<long double(long double)> f_conj_ld;
};

KernelFns kernel_fns(const fdiv::Kernel& kernel);

struct FenchelResult {
  std::string kernel;
  bool passed = false;
  double f_at_one = 0.0;
  double max_identity_rel_err = 0.0;  ///< over the 1000-point grid
  double min_young_gap = 0.0;         ///< over the 100 x 100 grid
};

/// f(1) == 0; |f*(f'(x)) - (x f'(x) - f(x))| <= 1e-9 relative on 1000
/// log-spaced x in [1e-3, 1e3]; f(x) + f*(u) - x u >= -1e-12 on 100 x 100
/// (x, u), u spanning f' of the x range. The Young gap is evaluated in long
/// double.
FenchelResult fenchel_suite(const KernelFns& fns);

// ---------------------------------------------------------------------------
// Model triples

/// Generator, inference network and flow sharing one store, all with
/// x_dim = z_dim = 2.
struct Triple {
  analytic::LinearGaussianSpec gen_spec;
  ad::ParameterStore store;
  models::GenerativeModel gen;
  models::InferenceModel inf;
  models::FlowDensityEstimator est;

  objective::ModelView view() const { return {store, gen, inf, est}; }
};

/// Random linear-Gaussian generator, a small tanh inference network near its
/// posterior scale, and a small random flow.
Triple random_triple(Rng& rng);

/// The analytic optimum for `spec` (orthogonal columns, 2-D): generator =
/// spec, inference = exact posterior, flow = exact marginal.
Triple optimum_triple(const analytic::LinearGaussianSpec& spec);

/// Random linear-Gaussian spec in 2-D with the ranges random_triple uses.
analytic::LinearGaussianSpec random_generator_spec(Rng& rng);

/// The data distribution used by the default checks.
analytic::LinearGaussianSpec default_pstar_spec();

/// A batch where data pairs coincide with generated pairs: (z, x) drawn from
/// the generator and q_noise set so that z = rsample(q(.|x), q_noise).
/// Requires the triple's inference network to have a nonsingular scale.
struct CoupledBatch {
  Matrix x_data;
  objective::ObjectiveNoise noise;
};
CoupledBatch coupled_batch(const Triple& triple, Eigen::Index k, Rng& rng);

struct GradientNorms {
  double theta = 0.0;
  double phi = 0.0;
  double eta = 0.0;
  double total = 0.0;  ///< objective value at the batch
};

GradientNorms objective_gradient_norms(const fdiv::Kernel& kernel, const objective::ModelView& view,
                                       const Matrix& x_data, const objective::ObjectiveNoise& noise);

// ---------------------------------------------------------------------------
// Statistical checks

enum class Status { Pass, Fail, InsufficientPrecision };
std::string_view status_name(Status s);

struct CaseResult {
  int config = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double se = 0.0;
  bool ok = false;
};

struct CheckResult {
  std::string name;
  std::string kernel;
  Status status = Status::Fail;
  int passed = 0;
  int total = 0;
  int required = 0;
  std::vector<CaseResult> cases;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct CheckOptions {
  std::uint64_t seed = 0;
  Eigen::Index n_bound = 100000;     ///< samples for the bound check
  Eigen::Index n_identity = 200000;  ///< samples for the two identities
  int bound_configs = 50;
  int bound_required = 49;
  int identity_configs = 20;
  int identity_required = 19;
  Eigen::Index k_stationarity = 4096;
  Eigen::Index n_stationarity = 100000;
  /// Statistical checks with fewer samples report insufficient precision.
  Eigen::Index min_n = 10000;
  double gradient_tol = 1e-3;
};

/// L^M <= L^V + 3 SE over random triples; one result per kernel.
std::vector<CheckResult> check_bound(const data::TargetDensity& pstar, const CheckOptions& opt, Rng& rng);

/// |L^M - (L^V - KL(p* || p_eta))| <= 3 SE for the KL kernel.
CheckResult check_kl_decoupling(const data::TargetDensity& pstar, const CheckOptions& opt, Rng& rng);

/// |L^M(exact posterior) - L^G| <= 3 SE over random generators; per kernel.
std::vector<CheckResult> check_fgan_equality(const data::TargetDensity& pstar, const CheckOptions& opt, Rng& rng);

/// Gradient norms at the optimum <= tol for all groups, and L^V within
/// 3 SE of 0; per kernel.
std::vector<CheckResult> check_stationarity(const analytic::LinearGaussianSpec& spec, const CheckOptions& opt,
                                            Rng& rng);

struct CheckReport {
  std::vector<FenchelResult> fenchel;
  std::vector<CheckResult> checks;

  bool any_failed() const;
  nlohmann::json to_json() const;
};

/// Fenchel suite plus the four statistical families against the marginal of
/// `pstar_spec`. The stationarity check uses `pstar_spec` when its columns
/// are orthogonal and a seeded random orthogonal spec otherwise.
CheckReport run_checks(const analytic::LinearGaussianSpec& pstar_spec, const CheckOptions& opt);

}  // namespace fgm::checks
