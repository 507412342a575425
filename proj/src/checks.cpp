#include "fgm/checks.hpp"

#include <algorithm>
#include <cmath>

namespace fgm::checks {

namespace {

using objective::LogRatios;

constexpr double kSeMultiplier = 3.0;
// Absolute slack for quantities that are zero up to rounding at the optimum.
constexpr double kRoundingFloor = 1e-12;

double norm_of_group(const ad::ParameterStore& store, const std::vector<Matrix>& grads, ad::Group g) {
  double s = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[ad::ParamId{i}].group == g) s += grads[i].squaredNorm();
  }
  return std::sqrt(s);
}

Status tally(CheckResult& r, Eigen::Index n, const CheckOptions& opt) {
  r.passed = static_cast<int>(std::count_if(r.cases.begin(), r.cases.end(), [](const CaseResult& c) { return c.ok; }));
  r.total = static_cast<int>(r.cases.size());
  if (n < opt.min_n) return Status::InsufficientPrecision;
  return r.passed >= r.required ? Status::Pass : Status::Fail;
}

models::FlowDensityEstimator random_flow(ad::ParameterStore& store, Rng& rng) {
  models::FlowDensityEstimator flow(store, rng, 2, 2, {8});
  for (const auto& layer : flow.layers()) {
    const std::size_t last = layer.scale.n_layers() - 1;
    Matrix& sw = store.value(layer.scale.weight(last));
    sw = uniform(rng, sw.rows(), sw.cols(), -0.02, 0.02);
    Matrix& sb = store.value(layer.scale.bias(last));
    sb = uniform(rng, sb.rows(), sb.cols(), -0.3, 0.0);
    Matrix& tw = store.value(layer.shift.weight(last));
    tw = uniform(rng, tw.rows(), tw.cols(), -0.3, 0.3);
    Matrix& tb = store.value(layer.shift.bias(last));
    tb = uniform(rng, tb.rows(), tb.cols(), -0.3, 0.3);
  }
  return flow;
}

bool has_orthogonal_columns(const analytic::LinearGaussianSpec& spec) {
  const Matrix g = spec.A.transpose() * spec.A;
  const Matrix off = g - Matrix(g.diagonal().asDiagonal());
  return off.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, g.diagonal().maxCoeff());
}

}  // namespace

// ---------------------------------------------------------------------------
// Fenchel suite

KernelFns kernel_fns(const fdiv::Kernel& k) {
  KernelFns fns;
  fns.name = std::string(k.name());
  fns.conj_sup = k.conj_domain_sup();
  fns.f = [k](double x) { return fdiv::f_value(k, x); };
  fns.f_prime = [k](double x) { return fdiv::f_prime(k, x); };
  fns.f_conj = [k](double u) { return fdiv::f_conj(k, u); };
  fns.f_ld = [k](long double x) { return fdiv::f_value(k, x); };
  fns.f_conj_ld = [k](long double u) { return fdiv::f_conj(k, u); };
  return fns;
}

FenchelResult fenchel_suite(const KernelFns& fns) {
  FenchelResult out;
  out.kernel = fns.name;
  out.f_at_one = fns.f(1.0);
  bool ok = out.f_at_one == 0.0;

  constexpr int kGrid = 1000;
  const double lo = std::log(1e-3);
  const double hi = std::log(1e3);
  for (int i = 0; i < kGrid; ++i) {
    const double x = std::exp(lo + (hi - lo) * i / (kGrid - 1));
    const double fp = fns.f_prime(x);
    const double ref = x * fp - fns.f(x);
    const double err = std::abs(fns.f_conj(fp) - ref) / std::abs(ref);
    out.max_identity_rel_err = std::max(out.max_identity_rel_err, err);
  }
  ok = ok && out.max_identity_rel_err <= 1e-9;

  constexpr int kYoung = 100;
  const double u_lo = fns.f_prime(1e-3);
  const double u_hi = fns.f_prime(1e3);
  out.min_young_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kYoung; ++i) {
    const long double x = std::exp(lo + (hi - lo) * i / (kYoung - 1));
    for (int j = 0; j < kYoung; ++j) {
      const long double u = u_lo + (u_hi - u_lo) * j / (kYoung - 1);
      const long double gap = fns.f_ld(x) + fns.f_conj_ld(u) - x * u;
      out.min_young_gap = std::min(out.min_young_gap, static_cast<double>(gap));
    }
  }
  ok = ok && out.min_young_gap >= -1e-12;
  out.passed = ok;
  return out;
}

// ---------------------------------------------------------------------------
// Triples

analytic::LinearGaussianSpec random_generator_spec(Rng& rng) {
  analytic::LinearGaussianSpec spec;
  spec.A = uniform(rng, 2, 2, -0.6, 0.6);
  spec.b = uniform(rng, 2, 1, -0.3, 0.3);
  spec.sigma = uniform(rng, 1, 1, 1.2, 1.6)(0, 0);
  return spec;
}

analytic::LinearGaussianSpec default_pstar_spec() {
  analytic::LinearGaussianSpec spec;
  spec.A = Matrix{{0.4, 0.1}, {-0.2, 0.3}};
  spec.b = Vector{{0.2, -0.1}};
  spec.sigma = 0.5;
  return spec;
}

Triple random_triple(Rng& rng) {
  Triple t;
  t.gen_spec = random_generator_spec(rng);
  t.gen = analytic::make_generative_model(t.gen_spec, t.store);
  t.inf = models::InferenceModel(t.store, rng, 2, 2, {8});
  // Final layer: small weights so q stays close to a posterior-scale Gaussian.
  const std::size_t last = t.inf.net().n_layers() - 1;
  Matrix& w = t.store.value(t.inf.net().weight(last));
  w.leftCols(2) = uniform(rng, w.rows(), 2, -0.1, 0.1);
  w.rightCols(2) = uniform(rng, w.rows(), 2, -0.01, 0.01);
  const Vector post_var = analytic::posterior_covariance(t.gen_spec).diagonal();
  Matrix& b = t.store.value(t.inf.net().bias(last));
  b.leftCols(2) = uniform(rng, 1, 2, -0.2, 0.2);
  b.rightCols(2) = (0.5 * post_var.array().log()).matrix().transpose() + uniform(rng, 1, 2, -0.1, 0.1);
  t.est = random_flow(t.store, rng);
  return t;
}

Triple optimum_triple(const analytic::LinearGaussianSpec& spec) {
  if (spec.x_dim() != 2 || spec.z_dim() != 2) throw StructuralError("optimum_triple: needs x_dim = z_dim = 2");
  Triple t;
  t.gen_spec = spec;
  t.gen = analytic::make_generative_model(spec, t.store);
  t.inf = analytic::make_optimal_inference(spec, t.store);
  t.est = analytic::make_gaussian_flow(spec.b, analytic::marginal_covariance(spec), t.store);
  return t;
}

CoupledBatch coupled_batch(const Triple& triple, Eigen::Index k, Rng& rng) {
  CoupledBatch out;
  out.noise.z_gen = standard_normal(rng, k, triple.gen.z_dim());
  out.noise.x_noise = standard_normal(rng, k, triple.gen.x_dim());
  ad::Tape tape(triple.store);
  out.x_data = triple.gen.rsample_x(tape, tape.constant(out.noise.z_gen), tape.constant(out.noise.x_noise)).value();
  const models::GaussianVars q = triple.inf.conditional(tape, tape.constant(out.x_data));
  out.noise.q_noise =
      ((out.noise.z_gen - q.mean.value()).array() * (-q.log_std.value().array()).exp()).matrix();
  return out;
}

GradientNorms objective_gradient_norms(const fdiv::Kernel& kernel, const objective::ModelView& view,
                                       const Matrix& x_data, const objective::ObjectiveNoise& noise) {
  ad::Tape tape(view.store);
  const auto g = objective::build_objective(tape, kernel, view, x_data, noise);
  tape.backward(g.total);
  const auto grads = tape.param_gradients();
  return {norm_of_group(view.store, grads, ad::Group::Theta), norm_of_group(view.store, grads, ad::Group::Phi),
          norm_of_group(view.store, grads, ad::Group::Eta), g.total.scalar()};
}

// ---------------------------------------------------------------------------
// Statistical checks

std::string_view status_name(Status s) {
  switch (s) {
    case Status::Pass:
      return "pass";
    case Status::Fail:
      return "fail";
    case Status::InsufficientPrecision:
      return "insufficient_precision";
  }
  return "fail";
}

nlohmann::json CheckResult::to_json() const {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : cases) {
    cs.push_back({{"config", c.config}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"gap", c.lhs - c.rhs}, {"se", c.se},
                  {"ok", c.ok}});
  }
  nlohmann::json j = {{"name", name},     {"kernel", kernel}, {"status", status_name(status)}, {"passed", passed},
                      {"total", total},   {"required", required}, {"cases", cs}};
  for (const auto& [key, value] : extra.items()) j[key] = value;
  return j;
}

std::vector<CheckResult> check_bound(const data::TargetDensity& pstar, const CheckOptions& opt, Rng& rng) {
  std::vector<CheckResult> results;
  for (const auto& k : fdiv::kAllKernels) {
    CheckResult r;
    r.name = "bound";
    r.kernel = std::string(k.name());
    r.required = opt.bound_required;
    results.push_back(std::move(r));
  }
  for (int c = 0; c < opt.bound_configs; ++c) {
    const Triple t = random_triple(rng);
    const LogRatios lm_r = objective::sample_log_ratios(t.view(), pstar.sample(opt.n_bound, rng), rng);
    const LogRatios lv_r = objective::sample_true_log_ratios(t.view(), pstar, opt.n_bound / 2, rng);
    for (std::size_t i = 0; i < fdiv::kAllKernels.size(); ++i) {
      CaseResult cr;
      cr.config = c;
      try {
        const auto lm = objective::lm_from_log_ratios(fdiv::kAllKernels[i], lm_r);
        const auto lv = objective::lv_from_log_ratios(fdiv::kAllKernels[i], lv_r);
        cr.lhs = lm.total;
        cr.rhs = lv.mean;
        cr.se = std::hypot(lm.combined_se(), lv.se);
        cr.ok = cr.lhs <= cr.rhs + kSeMultiplier * cr.se;
      } catch (const NumericalError&) {
        cr.ok = false;
        cr.lhs = cr.rhs = cr.se = std::numeric_limits<double>::quiet_NaN();
      }
      results[i].cases.push_back(cr);
    }
  }
  for (auto& r : results) r.status = tally(r, opt.n_bound, opt);
  return results;
}

CheckResult check_kl_decoupling(const data::TargetDensity& pstar, const CheckOptions& opt, Rng& rng) {
  CheckResult r;
  r.name = "kl_decoupling";
  r.kernel = "kl";
  r.required = opt.identity_required;
  for (int c = 0; c < opt.identity_configs; ++c) {
    const Triple t = random_triple(rng);
    CaseResult cr;
    cr.config = c;
    try {
      const auto id = objective::kl_decoupling_check(t.view(), pstar, opt.n_identity, rng);
      cr.lhs = id.lhs;
      cr.rhs = id.rhs;
      cr.se = id.se;
      cr.ok = std::abs(id.gap()) <= kSeMultiplier * id.se;
    } catch (const NumericalError&) {
      cr.lhs = cr.rhs = cr.se = std::numeric_limits<double>::quiet_NaN();
    }
    r.cases.push_back(cr);
  }
  r.status = tally(r, opt.n_identity, opt);
  return r;
}

std::vector<CheckResult> check_fgan_equality(const data::TargetDensity& pstar, const CheckOptions& opt, Rng& rng) {
  std::vector<CheckResult> results;
  for (const auto& k : fdiv::kAllKernels) {
    CheckResult r;
    r.name = "fgan_equality";
    r.kernel = std::string(k.name());
    r.required = opt.identity_required;
    results.push_back(std::move(r));
  }
  for (int c = 0; c < opt.identity_configs; ++c) {
    const analytic::LinearGaussianSpec spec = random_generator_spec(rng);
    ad::ParameterStore store;
    const models::GenerativeModel gen = analytic::make_generative_model(spec, store);
    const models::FlowDensityEstimator est = random_flow(store, rng);
    const analytic::ExactPosterior posterior(spec);
    const objective::ModelView view{store, gen, posterior, est};
    const LogRatios lm_r = objective::sample_log_ratios(view, pstar.sample(opt.n_identity, rng), rng);
    const LogRatios lg_r = objective::sample_marginal_log_ratios(spec, est, store, pstar, opt.n_identity, rng);
    for (std::size_t i = 0; i < fdiv::kAllKernels.size(); ++i) {
      CaseResult cr;
      cr.config = c;
      try {
        const auto lm = objective::lm_from_log_ratios(fdiv::kAllKernels[i], lm_r);
        const auto lg = objective::lm_from_log_ratios(fdiv::kAllKernels[i], lg_r);
        cr.lhs = lm.total;
        cr.rhs = lg.total;
        cr.se = std::hypot(lm.combined_se(), lg.combined_se());
        cr.ok = std::abs(cr.lhs - cr.rhs) <= kSeMultiplier * cr.se;
      } catch (const NumericalError&) {
        cr.lhs = cr.rhs = cr.se = std::numeric_limits<double>::quiet_NaN();
      }
      results[i].cases.push_back(cr);
    }
  }
  for (auto& r : results) r.status = tally(r, opt.n_identity, opt);
  return results;
}

std::vector<CheckResult> check_stationarity(const analytic::LinearGaussianSpec& spec, const CheckOptions& opt,
                                            Rng& rng) {
  const Triple t = optimum_triple(spec);
  const CoupledBatch batch = coupled_batch(t, opt.k_stationarity, rng);
  const analytic::MarginalDensity pstar(spec);
  const LogRatios lv_r = objective::sample_true_log_ratios(t.view(), pstar, opt.n_stationarity / 2, rng);
  std::vector<CheckResult> results;
  for (const auto& k : fdiv::kAllKernels) {
    CheckResult r;
    r.name = "stationarity";
    r.kernel = std::string(k.name());
    r.required = 1;
    const GradientNorms g = objective_gradient_norms(k, t.view(), batch.x_data, batch.noise);
    const objective::MeanSe lv = objective::lv_from_log_ratios(k, lv_r);
    const bool grads_ok = g.theta <= opt.gradient_tol && g.phi <= opt.gradient_tol && g.eta <= opt.gradient_tol;
    const bool lv_ok = std::abs(lv.mean) <= kSeMultiplier * lv.se + kRoundingFloor;
    CaseResult cr;
    cr.lhs = lv.mean;
    cr.rhs = 0.0;
    cr.se = lv.se;
    cr.ok = grads_ok && lv_ok;
    r.cases.push_back(cr);
    r.extra = {{"gnorm_theta", g.theta}, {"gnorm_phi", g.phi}, {"gnorm_eta", g.eta},
               {"lm_total", g.total},    {"lv", lv.mean},     {"lv_se", lv.se},
               {"gradient_tol", opt.gradient_tol}};
    r.status = tally(r, opt.n_stationarity, opt);
    results.push_back(std::move(r));
  }
  return results;
}

bool CheckReport::any_failed() const {
  return std::any_of(fenchel.begin(), fenchel.end(), [](const FenchelResult& f) { return !f.passed; }) ||
         std::any_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.status == Status::Fail; });
}

nlohmann::json CheckReport::to_json() const {
  nlohmann::json fj = nlohmann::json::array();
  for (const auto& f : fenchel) {
    fj.push_back({{"kernel", f.kernel},
                  {"status", f.passed ? "pass" : "fail"},
                  {"f_at_one", f.f_at_one},
                  {"max_identity_rel_err", f.max_identity_rel_err},
                  {"min_young_gap", f.min_young_gap}});
  }
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& c : checks) cj.push_back(c.to_json());
  return {{"fenchel", fj}, {"checks", cj}, {"all_passed", !any_failed()}};
}

CheckReport run_checks(const analytic::LinearGaussianSpec& pstar_spec, const CheckOptions& opt) {
  pstar_spec.validate();
  if (pstar_spec.x_dim() != 2) throw ConfigError("check: the oracle suite needs a 2-D linear_gaussian data spec");
  const analytic::MarginalDensity pstar(pstar_spec);
  Rng master(opt.seed);
  Rng bound_rng = split(master);
  Rng kl_rng = split(master);
  Rng fgan_rng = split(master);
  Rng stat_rng = split(master);

  CheckReport report;
  for (const auto& k : fdiv::kAllKernels) report.fenchel.push_back(fenchel_suite(kernel_fns(k)));
  auto append = [&](std::vector<CheckResult> rs) {
    for (auto& r : rs) report.checks.push_back(std::move(r));
  };
  append(check_bound(pstar, opt, bound_rng));
  report.checks.push_back(check_kl_decoupling(pstar, opt, kl_rng));
  append(check_fgan_equality(pstar, opt, fgan_rng));
  const bool usable = pstar_spec.z_dim() == 2 && has_orthogonal_columns(pstar_spec);
  const analytic::LinearGaussianSpec opt_spec = usable ? pstar_spec : analytic::random_orthogonal_spec(stat_rng, 2, 2);
  append(check_stationarity(opt_spec, opt, stat_rng));
  return report;
}

}  // namespace fgm::checks
