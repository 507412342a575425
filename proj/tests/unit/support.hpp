#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

// Numerical oracles shared by the unit tests. None of these call into the
// library, so they can be trusted independently of it.

namespace fgm::test {

/// Composite Simpson rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

/// Simpson on the square [a, b]^2, n intervals per axis.
inline double simpson2(const std::function<double(double, double)>& f, double a, double b, int n) {
  return simpson([&](double x) { return simpson([&](double y) { return f(x, y); }, a, b, n); }, a, b, n);
}

/// Central difference of a scalar function of a matrix, one entry at a time.
inline Eigen::MatrixXd fd_gradient(const std::function<double(const Eigen::MatrixXd&)>& f, const Eigen::MatrixXd& x,
                                   double h = 1e-4) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  Eigen::MatrixXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x(i);
    xp(i) = x0 + h;
    const double fp = f(xp);
    xp(i) = x0 - h;
    const double fm = f(xp);
    xp(i) = x0;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max |a - b| / max(scale, |b|) over entries.
inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double scale = 1.0) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a(i) - b(i)) / std::max(scale, std::abs(b(i))));
  }
  return worst;
}

/// log density of N(mean, cov) written out from the 2-D closed form.
inline double gauss2_log_prob(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov, const Eigen::Vector2d& x) {
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  Eigen::Matrix2d inv;
  inv << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
  inv /= det;
  const Eigen::Vector2d d = x - mean;
  return -std::log(2.0 * M_PI) - 0.5 * std::log(det) - 0.5 * d.dot(inv * d);
}

/// KL(N(m0, S0) || N(m1, S1)) in closed form.
inline double gauss_kl(const Eigen::VectorXd& m0, const Eigen::MatrixXd& s0, const Eigen::VectorXd& m1,
                       const Eigen::MatrixXd& s1) {
  const auto k = static_cast<double>(m0.size());
  const Eigen::MatrixXd s1inv = s1.inverse();
  const Eigen::VectorXd d = m1 - m0;
  return 0.5 * ((s1inv * s0).trace() + d.dot(s1inv * d) - k + std::log(s1.determinant() / s0.determinant()));
}

}  // namespace fgm::test
