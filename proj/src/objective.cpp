#include "fgm/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fgm::objective {

namespace {

constexpr Eigen::Index kChunk = 8192;

// Everything in r except the log density of x: log q(z|x) - log p_theta(x, z).
struct SideTerms {
  ad::Var data_rest;
  ad::Var x_gen;
  ad::Var gen_rest;
};

SideTerms side_terms(ad::Tape& tape, const ModelView& view, ad::Var x_data, const ObjectiveNoise& noise) {
  const auto data = view.inf.rsample_with_log_prob(tape, x_data, tape.constant(noise.q_noise));
  ad::Var data_rest = data.log_prob - view.gen.joint_log_prob(tape, x_data, data.z);

  ad::Var z_gen = tape.constant(noise.z_gen);
  const auto gen = view.gen.rsample_joint(tape, z_gen, tape.constant(noise.x_noise));
  ad::Var gen_rest = view.inf.log_prob(tape, z_gen, gen.x) - gen.log_joint;
  return {data_rest, gen.x, gen_rest};
}

[[noreturn]] void throw_sample(const char* what, const char* side, Eigen::Index index, double r) {
  std::ostringstream msg;
  msg << what << ": non-finite value for " << side << " sample " << index << " (r = " << r << ")";
  throw NumericalError(msg.str());
}

void require_finite(const char* what, const char* side, const Matrix& values, const Matrix& r, Eigen::Index offset) {
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (!std::isfinite(values(i, 0))) throw_sample(what, side, offset + i, r(i, 0));
  }
}

template <typename F>
Vector map_composite(const char* what, const char* side, const Vector& r, F&& f) {
  Vector out(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (!std::isfinite(r(i))) throw_sample(what, side, i, r(i));
    try {
      out(i) = f(r(i));
    } catch (const NumericalError&) {
      throw_sample(what, side, i, r(i));
    }
    if (!std::isfinite(out(i))) throw_sample(what, side, i, r(i));
  }
  return out;
}

Vector density_values(const models::DensityModel& est, const ad::ParameterStore& store, const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const Eigen::Index m = std::min(kChunk, x.rows() - start);
    ad::Tape tape(store);
    out.segment(start, m) = est.log_prob(tape, tape.constant(x.middleRows(start, m))).value();
  }
  return out;
}

void require_rows(const char* what, Eigen::Index n) {
  if (n < 1) throw DomainError(std::string(what) + ": needs at least one sample");
}

}  // namespace

MeanSe mean_and_se(const Vector& values) {
  require_rows("mean_and_se", values.size());
  const double n = static_cast<double>(values.size());
  const double mean = values.mean();
  if (values.size() < 2) return {mean, 0.0};
  const double var = (values.array() - mean).square().sum() / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

ObjectiveNoise ObjectiveNoise::draw(Eigen::Index k, int x_dim, int z_dim, Rng& rng) {
  ObjectiveNoise noise;
  noise.q_noise = standard_normal(rng, k, z_dim);
  noise.z_gen = standard_normal(rng, k, z_dim);
  noise.x_noise = standard_normal(rng, k, x_dim);
  return noise;
}

ad::Var log_ratio(ad::Tape& tape, const ModelView& view, ad::Var x, ad::Var z) {
  return view.est.log_prob(tape, x) + view.inf.log_prob(tape, z, x) - view.gen.joint_log_prob(tape, x, z);
}

double log_ratio(const ModelView& view, const Vector& x, const Vector& z) {
  if (x.size() != view.gen.x_dim() || z.size() != view.gen.z_dim()) {
    throw StructuralError("log_ratio: (x, z) dimensions do not match the models");
  }
  ad::Tape tape(view.store);
  return log_ratio(tape, view, tape.constant(x.transpose()), tape.constant(z.transpose())).scalar();
}

ad::Var composite_t1(const Kernel& kernel, ad::Var r) {
  using fdiv::Divergence;
  switch (kernel.id) {
    case Divergence::KL:
      return r + 1.0;
    case Divergence::ReverseKL:
      return -ad::exp(-r);
    case Divergence::JensenShannon:
      return (r - ad::softplus(r)) + std::numbers::ln2;
    case Divergence::PearsonChi2:
      return 2.0 * (ad::exp(r) - 1.0);
    case Divergence::SquaredHellinger:
      return -(ad::exp(-0.5 * r) - 1.0);
  }
  throw StructuralError("composite_t1: unknown kernel");
}

ad::Var composite_t2(const Kernel& kernel, ad::Var r) {
  using fdiv::Divergence;
  switch (kernel.id) {
    case Divergence::KL:
      return ad::exp(r);
    case Divergence::ReverseKL:
      return r - 1.0;
    case Divergence::JensenShannon:
      return ad::softplus(r) - std::numbers::ln2;
    case Divergence::PearsonChi2:
      return ad::exp(2.0 * r) - 1.0;
    case Divergence::SquaredHellinger:
      return ad::exp(0.5 * r) - 1.0;
  }
  throw StructuralError("composite_t2: unknown kernel");
}

ObjectiveGraph build_objective(ad::Tape& tape, const Kernel& kernel, const ModelView& view, const Matrix& x_data,
                               const ObjectiveNoise& noise) {
  const Eigen::Index k = x_data.rows();
  require_rows("build_objective", k);
  if (noise.q_noise.rows() != k || noise.z_gen.rows() != k || noise.x_noise.rows() != k) {
    throw StructuralError("build_objective: both expectations need the same batch size K");
  }
  ad::Var x = tape.constant(x_data);
  const SideTerms s = side_terms(tape, view, x, noise);
  ad::Var r_data = view.est.log_prob(tape, x) + s.data_rest;
  ad::Var r_gen = view.est.log_prob(tape, s.x_gen) + s.gen_rest;
  require_finite("build_objective", "data", r_data.value(), r_data.value(), 0);
  require_finite("build_objective", "generated", r_gen.value(), r_gen.value(), 0);

  ad::Var t1 = composite_t1(kernel, r_data);
  ad::Var t2 = composite_t2(kernel, r_gen);
  require_finite("build_objective", "data", t1.value(), r_data.value(), 0);
  require_finite("build_objective", "generated", t2.value(), r_gen.value(), 0);

  ad::Var term1 = ad::mean(t1);
  ad::Var term2 = ad::mean(t2);
  return {term1 - term2, term1, term2, r_data, r_gen};
}

LogRatios sample_log_ratios(const ModelView& view, const Matrix& x_data, Rng& rng) {
  const Eigen::Index n = x_data.rows();
  require_rows("sample_log_ratios", n);
  LogRatios out{Vector(n), Vector(n)};
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index m = std::min(kChunk, n - start);
    const ObjectiveNoise noise = ObjectiveNoise::draw(m, view.gen.x_dim(), view.gen.z_dim(), rng);
    ad::Tape tape(view.store);
    ad::Var x = tape.constant(x_data.middleRows(start, m));
    const SideTerms s = side_terms(tape, view, x, noise);
    out.data.segment(start, m) = (view.est.log_prob(tape, x) + s.data_rest).value();
    out.gen.segment(start, m) = (view.est.log_prob(tape, s.x_gen) + s.gen_rest).value();
  }
  return out;
}

ObjectiveEstimate lm_from_log_ratios(const Kernel& kernel, const LogRatios& ratios) {
  require_rows("estimate_LM", ratios.data.size());
  if (ratios.data.size() != ratios.gen.size()) {
    throw StructuralError("estimate_LM: both expectations need the same number of samples");
  }
  const Vector t1 = map_composite("estimate_LM", "data", ratios.data,
                                  [&](double r) { return fdiv::composite_from_logratio(kernel, r).t1; });
  const Vector t2 = map_composite("estimate_LM", "generated", ratios.gen,
                                  [&](double r) { return fdiv::composite_from_logratio(kernel, r).t2; });
  const MeanSe a = mean_and_se(t1);
  const MeanSe b = mean_and_se(t2);
  ObjectiveEstimate est;
  est.term1 = a.mean;
  est.term2 = b.mean;
  est.total = a.mean - b.mean;
  est.n_samples = ratios.data.size();
  est.se_term1 = a.se;
  est.se_term2 = b.se;
  return est;
}

ObjectiveEstimate estimate_LM(const Kernel& kernel, const ModelView& view, const Matrix& x_data, Rng& rng) {
  return lm_from_log_ratios(kernel, sample_log_ratios(view, x_data, rng));
}

LogRatios sample_true_log_ratios(const ModelView& view, const data::TargetDensity& pstar, Eigen::Index n_per_side,
                                 Rng& rng) {
  require_rows("sample_true_log_ratios", n_per_side);
  if (pstar.dim() != view.gen.x_dim()) throw StructuralError("sample_true_log_ratios: p* dimension mismatch");
  LogRatios out{Vector(n_per_side), Vector(n_per_side)};
  for (Eigen::Index start = 0; start < n_per_side; start += kChunk) {
    const Eigen::Index m = std::min(kChunk, n_per_side - start);
    const Matrix x_data = pstar.sample(m, rng);
    const ObjectiveNoise noise = ObjectiveNoise::draw(m, view.gen.x_dim(), view.gen.z_dim(), rng);
    ad::Tape tape(view.store);
    const SideTerms s = side_terms(tape, view, tape.constant(x_data), noise);
    out.data.segment(start, m) = pstar.log_prob(x_data) + s.data_rest.value();
    out.gen.segment(start, m) = pstar.log_prob(s.x_gen.value()) + s.gen_rest.value();
  }
  return out;
}

MeanSe lv_from_log_ratios(const Kernel& kernel, const LogRatios& ratios) {
  auto f_bal = [&](double r) { return fdiv::f_balanced_from_logratio(kernel, r); };
  const MeanSe g = mean_and_se(map_composite("estimate_LV", "generated", ratios.gen, f_bal));
  const MeanSe d = mean_and_se(map_composite("estimate_LV", "data", ratios.data, f_bal));
  return {g.mean + d.mean, std::sqrt(g.se * g.se + d.se * d.se)};
}

MeanSe estimate_LV(const Kernel& kernel, const ModelView& view, const data::TargetDensity& pstar, Eigen::Index n,
                   Rng& rng) {
  if (n < 4) throw DomainError("estimate_LV: needs at least 4 samples");
  return lv_from_log_ratios(kernel, sample_true_log_ratios(view, pstar, n / 2, rng));
}

MeanSe estimate_KL_target(const models::DensityModel& est, const ad::ParameterStore& store,
                          const data::TargetDensity& pstar, Eigen::Index n, Rng& rng) {
  require_rows("estimate_KL_target", n);
  const Matrix x = pstar.sample(n, rng);
  const Vector diff = pstar.log_prob(x) - density_values(est, store, x);
  if (!diff.allFinite()) throw NumericalError("estimate_KL_target: non-finite log density");
  return mean_and_se(diff);
}

LogRatios sample_marginal_log_ratios(const analytic::LinearGaussianSpec& spec, const models::DensityModel& est,
                                     const ad::ParameterStore& store, const data::TargetDensity& pstar,
                                     Eigen::Index n, Rng& rng) {
  require_rows("estimate_LG", n);
  if (pstar.dim() != spec.x_dim() || est.dim() != spec.x_dim()) {
    throw StructuralError("estimate_LG: dimension mismatch between p*, p_eta and the generator");
  }
  const analytic::MarginalDensity marginal(spec);
  const Matrix x_real = pstar.sample(n, rng);
  const Matrix x_gen = marginal.sample(n, rng);
  LogRatios r;
  r.data = density_values(est, store, x_real) - marginal.log_prob(x_real);
  r.gen = density_values(est, store, x_gen) - marginal.log_prob(x_gen);
  return r;
}

ObjectiveEstimate estimate_LG(const Kernel& kernel, const analytic::LinearGaussianSpec& spec,
                              const models::DensityModel& est, const ad::ParameterStore& store,
                              const data::TargetDensity& pstar, Eigen::Index n, Rng& rng) {
  return lm_from_log_ratios(kernel, sample_marginal_log_ratios(spec, est, store, pstar, n, rng));
}

IdentityCheck kl_decoupling_check(const ModelView& view, const data::TargetDensity& pstar, Eigen::Index n, Rng& rng) {
  const Kernel kl{fdiv::Divergence::KL};
  const ObjectiveEstimate lm = estimate_LM(kl, view, pstar.sample(n, rng), rng);
  const MeanSe lv = estimate_LV(kl, view, pstar, n, rng);
  const MeanSe penalty = estimate_KL_target(view.est, view.store, pstar, n, rng);
  IdentityCheck out;
  out.lhs = lm.total;
  out.rhs = lv.mean - penalty.mean;
  const double se_lm = lm.combined_se();
  out.se = std::sqrt(se_lm * se_lm + lv.se * lv.se + penalty.se * penalty.se);
  return out;
}

IdentityCheck fgan_equality_check(const Kernel& kernel, const analytic::LinearGaussianSpec& spec,
                                  const ad::ParameterStore& store, const models::GenerativeModel& gen,
                                  const models::DensityModel& est, const data::TargetDensity& pstar, Eigen::Index n,
                                  Rng& rng) {
  const analytic::ExactPosterior posterior(spec);
  const ModelView view{store, gen, posterior, est};
  const ObjectiveEstimate lm = estimate_LM(kernel, view, pstar.sample(n, rng), rng);
  const ObjectiveEstimate lg = estimate_LG(kernel, spec, est, store, pstar, n, rng);
  IdentityCheck out;
  out.lhs = lm.total;
  out.rhs = lg.total;
  const double a = lm.combined_se();
  const double b = lg.combined_se();
  out.se = std::sqrt(a * a + b * b);
  return out;
}

}  // namespace fgm::objective
