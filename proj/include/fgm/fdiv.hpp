#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>

#include "fgm/errors.hpp"

namespace fgm::fdiv {

enum class Divergence { KL, ReverseKL, JensenShannon, PearsonChi2, SquaredHellinger };

/// A closed-form f-divergence generator. The kernel is a value type; all
/// evaluation goes through the free functions below.
struct Kernel {
  Divergence id = Divergence::KL;

  /// Config name: "kl", "reverse_kl", "js", "chi2", "hellinger2".
  std::string_view name() const;

  /// Supremum of the conjugate's domain (+inf when unbounded above).
  double conj_domain_sup() const;

  friend bool operator==(const Kernel&, const Kernel&) = default;
};

inline constexpr std::array<Kernel, 5> kAllKernels{
    Kernel{Divergence::KL}, Kernel{Divergence::ReverseKL},
    Kernel{Divergence::JensenShannon}, Kernel{Divergence::PearsonChi2},
    Kernel{Divergence::SquaredHellinger}};

/// Case-insensitive lookup; throws ConfigError listing the valid names.
Kernel parse_kernel(std::string_view name);
std::string valid_kernel_names();

namespace detail {

template <typename Scalar>
void require_ratio(const Kernel& k, Scalar x, const char* what) {
  if (!(x > Scalar(0)) || !std::isfinite(static_cast<double>(x))) {
    throw DomainError(std::string(what) + "(" + std::string(k.name()) +
                      "): ratio must be positive and finite, got " +
                      std::to_string(static_cast<double>(x)));
  }
}

// log(1 + e^r) without overflow.
template <typename Scalar>
Scalar softplus(Scalar r) {
  using std::exp;
  using std::log1p;
  return r > Scalar(0) ? r + log1p(exp(-r)) : log1p(exp(r));
}

}  // namespace detail

template <typename Scalar = double>
Scalar f_value(const Kernel& k, Scalar x) {
  using std::log;
  using std::sqrt;
  detail::require_ratio(k, x, "f_value");
  switch (k.id) {
    case Divergence::KL:
      return x * log(x);
    case Divergence::ReverseKL:
      return -log(x);
    case Divergence::JensenShannon:
      return x * log(x) - (x + Scalar(1)) * log((x + Scalar(1)) / Scalar(2));
    case Divergence::PearsonChi2:
      return (x - Scalar(1)) * (x - Scalar(1));
    case Divergence::SquaredHellinger: {
      const Scalar d = sqrt(x) - Scalar(1);
      return d * d;
    }
  }
  return Scalar(0);
}

template <typename Scalar = double>
Scalar f_prime(const Kernel& k, Scalar x) {
  using std::log;
  using std::sqrt;
  detail::require_ratio(k, x, "f_prime");
  switch (k.id) {
    case Divergence::KL:
      return log(x) + Scalar(1);
    case Divergence::ReverseKL:
      return -Scalar(1) / x;
    case Divergence::JensenShannon:
      return log(Scalar(2) * x / (x + Scalar(1)));
    case Divergence::PearsonChi2:
      return Scalar(2) * (x - Scalar(1));
    case Divergence::SquaredHellinger:
      return Scalar(1) - Scalar(1) / sqrt(x);
  }
  return Scalar(0);
}

/// Fenchel conjugate. Arguments on or beyond the domain boundary are rejected.
template <typename Scalar = double>
Scalar f_conj(const Kernel& k, Scalar u) {
  using std::exp;
  using std::log;
  if (!std::isfinite(static_cast<double>(u))) {
    throw DomainError("f_conj(" + std::string(k.name()) + "): argument is not finite");
  }
  const double sup = k.conj_domain_sup();
  if (std::isfinite(sup) && !(static_cast<double>(u) < sup)) {
    throw DomainError("f_conj(" + std::string(k.name()) + "): u = " +
                      std::to_string(static_cast<double>(u)) +
                      " violates the bound u < " + std::to_string(sup));
  }
  switch (k.id) {
    case Divergence::KL:
      return exp(u - Scalar(1));
    case Divergence::ReverseKL:
      return -Scalar(1) - log(-u);
    case Divergence::JensenShannon:
      return -log(Scalar(2) - exp(u));
    case Divergence::PearsonChi2:
      return u * u / Scalar(4) + u;
    case Divergence::SquaredHellinger:
      return u / (Scalar(1) - u);
  }
  return Scalar(0);
}

/// The two integrands of the joint objective at ratio e^r:
/// t1 = f'(e^r) and t2 = f*(f'(e^r)).
struct Composite {
  double t1 = 0.0;
  double t2 = 0.0;
};

/// Evaluates (t1, t2) from the log-ratio directly. Throws NumericalError if
/// either component overflows (KL and chi2 at very large r).
Composite composite_from_logratio(const Kernel& k, double r);

/// f(e^r), stable for large |r|.
double f_from_logratio(const Kernel& k, double r);

/// f(e^r) / (1 + e^r), the integrand of the balanced importance-sampling
/// estimator of D_f. Finite for every finite r.
double f_balanced_from_logratio(const Kernel& k, double r);

}  // namespace fgm::fdiv
