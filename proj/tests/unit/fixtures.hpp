#pragma once

#include "fgm/objective.hpp"
#include "fgm/random.hpp"

// Random model builders shared by the unit and acceptance tests.

namespace fgm::test {

/// Adds N(0, sd^2) noise to every parameter of one group.
inline void perturb(ad::ParameterStore& store, ad::Group g, double sd, Rng& rng) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ad::ParamId id{i};
    if (store[id].group != g) continue;
    Eigen::MatrixXd& v = store.value(id);
    v += sd * standard_normal(rng, v.rows(), v.cols());
  }
}

/// Perturbs a zero-initialized flow into a "small" random one: hidden layers
/// move freely, final scale outputs stay near zero so mass stays near the
/// origin.
inline void randomize_flow(ad::ParameterStore& store, const models::FlowDensityEstimator& est, Rng& rng) {
  for (const auto& layer : est.layers()) {
    for (const models::Mlp* net : {&layer.scale, &layer.shift}) {
      for (std::size_t l = 0; l < net->n_layers(); ++l) {
        const bool last = l + 1 == net->n_layers();
        const double sd = !last ? 0.5 : (net == &layer.scale ? 0.1 : 0.3);
        for (ad::ParamId id : {net->weight(l), net->bias(l)}) {
          Eigen::MatrixXd& v = store.value(id);
          v += sd * standard_normal(rng, v.rows(), v.cols());
        }
      }
    }
  }
}

/// Largest entrywise error between the tape gradient of the batch objective
/// and central differences over every parameter. Each entry is scaled by
/// max(|fd|, 1e-3 * max |fd|) so near-zero entries are judged absolutely.
inline double objective_fd_rel_err(const fdiv::Kernel& kernel, ad::ParameterStore& store,
                                   const objective::ModelView& view, const Eigen::MatrixXd& x_data,
                                   const objective::ObjectiveNoise& noise, double h = 1e-5) {
  auto value = [&] {
    ad::Tape tape(store);
    return objective::build_objective(tape, kernel, view, x_data, noise).total.scalar();
  };
  std::vector<Eigen::MatrixXd> analytic;
  {
    ad::Tape tape(store);
    tape.backward(objective::build_objective(tape, kernel, view, x_data, noise).total);
    analytic = tape.param_gradients();
  }
  std::vector<Eigen::MatrixXd> fd;
  double fd_max = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Eigen::MatrixXd& v = store.value(ad::ParamId{i});
    Eigen::MatrixXd g(v.rows(), v.cols());
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      const double v0 = v(j);
      v(j) = v0 + h;
      const double fp = value();
      v(j) = v0 - h;
      const double fm = value();
      v(j) = v0;
      g(j) = (fp - fm) / (2.0 * h);
    }
    fd_max = std::max(fd_max, g.cwiseAbs().maxCoeff());
    fd.push_back(std::move(g));
  }
  const double floor = std::max(1e-3 * fd_max, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    for (Eigen::Index j = 0; j < fd[i].size(); ++j) {
      worst = std::max(worst, std::abs(analytic[i](j) - fd[i](j)) / std::max(std::abs(fd[i](j)), floor));
    }
  }
  return worst;
}

}  // namespace fgm::test
