#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace fgm {

/// One RNG stream per thread of work; nothing in the library shares one.
using Rng = std::mt19937_64;

inline Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  // Row-major fill so a batch's first rows do not depend on its width.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = n(rng);
  }
  return out;
}

inline Eigen::MatrixXd uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = u(rng);
  }
  return out;
}

/// Independent child stream, so adding draws to one consumer does not shift
/// another's sequence.
inline Rng split(Rng& parent) { return Rng(parent()); }

}  // namespace fgm
