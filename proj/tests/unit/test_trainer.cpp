#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fgm/checks.hpp"
#include "fgm/trainer.hpp"
#include "support.hpp"

using namespace fgm;
using namespace fgm::trainer;

namespace {

std::vector<Matrix> snapshot(const ad::ParameterStore& store) {
  std::vector<Matrix> out;
  for (const auto& p : store.parameters()) out.push_back(p.value);
  return out;
}

double max_drift(const ad::ParameterStore& store, const std::vector<Matrix>& before) {
  double worst = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    worst = std::max(worst, (store.value(ad::ParamId{i}) - before[i]).cwiseAbs().maxCoeff());
  }
  return worst;
}

TrainConfig small_config() {
  TrainConfig c;
  c.T = 20;
  c.K = 32;
  c.eval_every = 5;
  c.n_eval_samples = 200;
  c.seed = 3;
  return c;
}

std::vector<MetricsRow> rows_from(const std::vector<double>& holdout, const std::vector<double>& term2) {
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    MetricsRow r;
    r.iter = static_cast<long>(100 * (i + 1));
    r.logp_eta_holdout = holdout[i];
    r.term2 = term2[i];
    r.mode_coverage = 8.0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("first Adam step moves by lr in the gradient's direction") {
  Matrix p = Matrix::Zero(2, 2);
  Matrix g(2, 2);
  g << 3.0, -0.02, 1e-3, -50.0;
  AdamState state;
  const AdamHyper h{0.01, 0.5, 0.999, 1e-8};
  adam_step(state, {&p}, {g}, h, Direction::Descent);
  // m_hat = g, v_hat = g^2, so the step is -lr g / (|g| + eps).
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(p(i) == doctest::Approx(-0.01 * g(i) / (std::abs(g(i)) + 1e-8)).epsilon(1e-14));
  }
  CHECK(state.t == 1);
}

TEST_CASE("second Adam step follows the bias-corrected recurrence") {
  Matrix p = Matrix::Constant(1, 1, 1.0);
  AdamState state;
  const AdamHyper h{0.1, 0.5, 0.999, 1e-8};
  adam_step(state, {&p}, {Matrix::Constant(1, 1, 2.0)}, h, Direction::Ascent);
  adam_step(state, {&p}, {Matrix::Constant(1, 1, -1.0)}, h, Direction::Ascent);
  const double m = 0.5 * (0.5 * 2.0) + 0.5 * -1.0;            // 0
  const double v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;       // 0.004996
  const double step2 = 0.1 * (m / 0.75) / (std::sqrt(v / (1.0 - 0.999 * 0.999)) + 1e-8);
  CHECK(p(0) == doctest::Approx(1.0 + 0.1 * 2.0 / (2.0 + 1e-8) + step2).epsilon(1e-14));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  Matrix p = Matrix::Constant(3, 1, 0.7);
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(state, {&p}, {Matrix::Zero(3, 1)}, AdamHyper{}, Direction::Descent);
  CHECK(p == Matrix::Constant(3, 1, 0.7));
}

TEST_CASE("Adam rejects mismatched shapes") {
  Matrix p = Matrix::Zero(2, 2);
  AdamState state;
  CHECK_THROWS_AS(adam_step(state, {&p}, {Matrix::Zero(2, 3)}, AdamHyper{}, Direction::Descent), StructuralError);
  CHECK_THROWS_AS(adam_step(state, {&p}, {}, AdamHyper{}, Direction::Descent), StructuralError);
}

TEST_CASE("T = 0 returns the models unchanged") {
  Rng rng(1);
  auto model = make_joint_model(ModelConfig{}, 2, rng);
  const auto before = snapshot(model.store);
  const auto ring = data::ring_mixture(8, 2.0, 0.05);
  const Matrix x = ring.sample(300, rng);
  auto c = small_config();
  c.T = 0;
  c.K = 270;
  const auto res = train(c, x, model, &ring);
  CHECK(res.rows.empty());
  CHECK(res.iterations == 0);
  CHECK(max_drift(model.store, before) == 0.0);
}

TEST_CASE("each iteration applies Adam once per group") {
  Rng rng(2);
  auto model = make_joint_model(ModelConfig{}, 2, rng);
  const Matrix x = data::ring_mixture(8, 2.0, 0.05).sample(500, rng);
  auto c = small_config();
  auto res = train(c, x, model);
  CHECK(res.adam_steps == std::array<long, 3>{20, 20, 20});
  c.eta_steps_per_iter = 3;
  c.update_theta = false;
  res = train(c, x, model);
  CHECK(res.adam_steps == std::array<long, 3>{0, 20, 60});
}

TEST_CASE("frozen groups do not move") {
  Rng rng(3);
  auto model = make_joint_model(ModelConfig{}, 2, rng);
  const Matrix x = data::ring_mixture(8, 2.0, 0.05).sample(500, rng);
  auto c = small_config();
  c.update_theta = false;
  c.update_eta = false;
  const auto before = snapshot(model.store);
  train(c, x, model);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto g = model.store[ad::ParamId{i}].group;
    const bool moved = model.store.value(ad::ParamId{i}) != before[i];
    CHECK(moved == (g == ad::Group::Phi));
  }
}

TEST_CASE("metrics rows follow eval_every and the final iteration") {
  Rng rng(4);
  auto model = make_joint_model(ModelConfig{}, 2, rng);
  const auto ring = data::ring_mixture(8, 2.0, 0.05);
  const Matrix x = ring.sample(500, rng);
  auto c = small_config();
  c.T = 12;
  long hooked = 0;
  TrainHooks hooks;
  hooks.on_row = [&](const MetricsRow&) { ++hooked; };
  const auto res = train(c, x, model, &ring, hooks);
  REQUIRE(res.rows.size() == 3);
  CHECK(res.rows[0].iter == 5);
  CHECK(res.rows[1].iter == 10);
  CHECK(res.rows[2].iter == 12);
  CHECK(hooked == 3);
  for (const auto& r : res.rows) {
    CHECK(r.mode_coverage.has_value());
    CHECK(r.lm_total == doctest::Approx(r.term1 - r.term2));
    CHECK(std::isfinite(r.logp_eta_holdout));
    CHECK(r.wall_ms == 0.0);
  }
}

TEST_CASE("identical seeds give identical trajectories") {
  const Matrix x = [] {
    Rng r(5);
    return data::ring_mixture(8, 2.0, 0.05).sample(500, r);
  }();
  auto run = [&] {
    Rng rng(6);
    auto model = make_joint_model(ModelConfig{}, 2, rng);
    std::ostringstream csv;
    write_metrics_csv(csv, train(small_config(), x, model).rows);
    return std::make_pair(csv.str(), snapshot(model.store));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("training rejects batches larger than the training split") {
  Rng rng(7);
  auto model = make_joint_model(ModelConfig{}, 2, rng);
  const Matrix x = standard_normal(rng, 100, 2);
  auto c = small_config();
  c.K = 95;  // 90 training rows after a 10 percent holdout
  CHECK_THROWS_AS(train(c, x, model), ConfigError);
  c.K = 90;
  CHECK_NOTHROW(train(c, x, model));
  CHECK_THROWS_AS(train(c, standard_normal(rng, 100, 3), model), StructuralError);
}

TEST_CASE("train config validation") {
  auto bad = [](auto&& mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.kernel = "tv"; });
  bad([](TrainConfig& c) { c.T = -1; });
  bad([](TrainConfig& c) { c.K = 0; });
  bad([](TrainConfig& c) { c.lr_eta = 0.0; });
  bad([](TrainConfig& c) { c.beta1 = 1.0; });
  bad([](TrainConfig& c) { c.eta_steps_per_iter = 0; });
  bad([](TrainConfig& c) { c.holdout_fraction = 1.0; });
  bad([](TrainConfig& c) { c.clip_norm = -1.0; });
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("non-finite objective aborts with the last good parameters") {
  Rng rng(8);
  const auto spec = analytic::random_orthogonal_spec(rng, 2, 2);
  auto t = checks::optimum_triple(spec);
  // A near-deterministic decoder makes data-side ratios enormous, which
  // overflows the chi-square composite.
  const std::size_t last = t.gen.net().n_layers() - 1;
  t.store.value(t.gen.net().bias(last)).rightCols(2).setConstant(models::kLogStdMin);
  const auto before = snapshot(t.store);
  const Matrix x = analytic::MarginalDensity(spec).sample(200, rng);
  auto c = small_config();
  c.kernel = "chi2";
  long checkpoint_iter = -1;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const ad::ParameterStore&, long iter) { checkpoint_iter = iter; };
  try {
    train(c, x, t.store, t.gen, t.inf, t.est, nullptr, hooks);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.iteration() == 1);
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
  CHECK(checkpoint_iter == 1);
  CHECK(max_drift(t.store, before) == 0.0);
}

TEST_CASE("gradient clipping caps the applied step") {
  Rng rng(9);
  auto model = make_joint_model(ModelConfig{}, 2, rng);
  const Matrix x = data::ring_mixture(8, 2.0, 0.05).sample(500, rng);
  auto c = small_config();
  c.clip_norm = 1e-3;
  const auto res = train(c, x, model);
  // Reported norms are the raw ones; clipping changes only the update.
  CHECK(res.rows.front().gnorm_theta > 1e-3);
}

TEST_CASE("optimum is nearly stationary under training") {
  Rng rng(10);
  const auto spec = analytic::random_orthogonal_spec(rng, 2, 2);
  auto t = checks::optimum_triple(spec);
  const analytic::MarginalDensity pstar(spec);
  const Matrix x = pstar.sample(4000, rng);
  auto c = small_config();
  c.T = 100;
  c.K = 256;
  c.eval_every = 50;
  c.lr_theta_phi = 1e-5;
  c.lr_eta = 1e-5;
  const auto before = snapshot(t.store);
  train(c, x, t.store, t.gen, t.inf, t.est);
  // Adam moves each coordinate by at most lr (1 - beta1) / sqrt(1 - beta2)
  // per step; in practice the ratio stays near 1.
  CHECK(max_drift(t.store, before) <= c.lr_theta_phi * static_cast<double>(c.T));
  Rng er(11);
  for (const auto& k : fdiv::kAllKernels) {
    const auto lm = objective::estimate_LM(k, t.view(), pstar.sample(50000, er), er);
    CAPTURE(k.name());
    CHECK(std::abs(lm.total) <= 3.0 * lm.combined_se());
  }
}

TEST_CASE("eta-only training ascends the objective") {
  Rng rng(12);
  auto t = checks::random_triple(rng);
  const analytic::MarginalDensity pstar(checks::default_pstar_spec());
  const Matrix x = pstar.sample(5000, rng);
  const fdiv::Kernel kl{fdiv::Divergence::KL};
  Rng e1(13);
  const auto before = objective::estimate_LM(kl, t.view(), pstar.sample(50000, e1), e1);
  auto c = small_config();
  c.T = 2000;
  c.K = 128;
  c.eval_every = 1000;
  c.update_theta = false;
  c.update_phi = false;
  const auto res = train(c, x, t.store, t.gen, t.inf, t.est);
  CHECK(res.adam_steps[0] == 0);
  Rng e2(14);
  const auto after = objective::estimate_LM(kl, t.view(), pstar.sample(50000, e2), e2);
  const double se = std::hypot(before.combined_se(), after.combined_se());
  CAPTURE(before.total);
  CAPTURE(after.total);
  CHECK(after.total - before.total > 3.0 * se);
}

TEST_CASE("collapse diagnosis flags an injected holdout drop") {
  std::vector<double> h(20, -1.0), t2(20, 0.5);
  for (std::size_t i = 12; i < 20; ++i) h[i] = -3.0;
  const auto rep = diagnose_collapse(rows_from(h, t2), 4);
  REQUIRE(rep.events.size() == 1);
  CHECK(rep.events[0].row == 12);
  CHECK(rep.events[0].iter == 1300);
  CHECK(rep.events[0].holdout_drop == doctest::Approx(2.0));
  CHECK(rep.collapsed());
  CHECK(rep.coverage.size() == 20);
}

TEST_CASE("collapse diagnosis ignores improving, constant and co-moving runs") {
  std::vector<double> up(20), flat(20, -1.0), t2(20, 0.5);
  for (std::size_t i = 0; i < 20; ++i) up[i] = -5.0 + 0.2 * static_cast<double>(i);
  CHECK_FALSE(diagnose_collapse(rows_from(up, t2), 4).collapsed());
  CHECK_FALSE(diagnose_collapse(rows_from(flat, t2), 4).collapsed());
  // A drop accompanied by an equally large term2 change is not collapse.
  std::vector<double> h(20, -1.0), moving(20, 0.5);
  for (std::size_t i = 12; i < 20; ++i) {
    h[i] = -3.0;
    moving[i] = 3.0;
  }
  CHECK_FALSE(diagnose_collapse(rows_from(h, moving), 4).collapsed());
  CHECK_THROWS_AS(diagnose_collapse(rows_from(h, moving), 1), DomainError);
  CHECK(diagnose_collapse({}, 3).events.empty());
}

TEST_CASE("metrics rows format with nine significant digits") {
  MetricsRow r;
  r.iter = 500;
  r.lm_total = 1.0 / 3.0;
  r.term1 = -2.5;
  r.term2 = 1e-12;
  r.logp_eta_holdout = -123456.789012;
  r.gnorm_theta = 2.0;
  CHECK(format_metrics_row(r) == "500,0.333333333,-2.5,1e-12,-123456.789,,2,0,0,0");
  r.mode_coverage = 7.0;
  CHECK(format_metrics_row(r) == "500,0.333333333,-2.5,1e-12,-123456.789,7,2,0,0,0");
  std::ostringstream out;
  write_metrics_csv(out, {});
  CHECK(out.str() == std::string(kMetricsHeader) + "\n");
}
