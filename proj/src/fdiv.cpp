#include "fgm/fdiv.hpp"

#include <algorithm>
#include <cctype>

namespace fgm::fdiv {

namespace {

constexpr double kLog2 = std::numbers::ln2;

using detail::softplus;

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view Kernel::name() const {
  switch (id) {
    case Divergence::KL:
      return "kl";
    case Divergence::ReverseKL:
      return "reverse_kl";
    case Divergence::JensenShannon:
      return "js";
    case Divergence::PearsonChi2:
      return "chi2";
    case Divergence::SquaredHellinger:
      return "hellinger2";
  }
  return "unknown";
}

double Kernel::conj_domain_sup() const {
  switch (id) {
    case Divergence::ReverseKL:
      return 0.0;
    case Divergence::JensenShannon:
      return kLog2;
    case Divergence::SquaredHellinger:
      return 1.0;
    case Divergence::KL:
    case Divergence::PearsonChi2:
      break;
  }
  return std::numeric_limits<double>::infinity();
}

std::string valid_kernel_names() {
  std::string out;
  for (const auto& k : kAllKernels) {
    if (!out.empty()) out += ", ";
    out += k.name();
  }
  return out;
}

Kernel parse_kernel(std::string_view name) {
  const std::string key = lowercase(name);
  for (const auto& k : kAllKernels) {
    if (key == k.name()) return k;
  }
  throw ConfigError("unknown kernel '" + std::string(name) +
                    "'; valid kernels: " + valid_kernel_names());
}

Composite composite_from_logratio(const Kernel& k, double r) {
  if (!std::isfinite(r)) {
    throw DomainError("composite_from_logratio: log-ratio is not finite");
  }
  Composite c;
  switch (k.id) {
    case Divergence::KL:
      c = {r + 1.0, std::exp(r)};
      break;
    case Divergence::ReverseKL:
      c = {-std::exp(-r), r - 1.0};
      break;
    case Divergence::JensenShannon: {
      const double sp = softplus(r);
      c = {kLog2 + r - sp, sp - kLog2};
      break;
    }
    case Divergence::PearsonChi2:
      c = {2.0 * std::expm1(r), std::expm1(2.0 * r)};
      break;
    case Divergence::SquaredHellinger:
      c = {-std::expm1(-0.5 * r), std::expm1(0.5 * r)};
      break;
  }
  if (!std::isfinite(c.t1) || !std::isfinite(c.t2)) {
    throw NumericalError("composite_from_logratio(" + std::string(k.name()) +
                         "): overflow at log-ratio r = " + std::to_string(r));
  }
  return c;
}

double f_from_logratio(const Kernel& k, double r) {
  switch (k.id) {
    case Divergence::KL:
      return r * std::exp(r);
    case Divergence::ReverseKL:
      return -r;
    case Divergence::JensenShannon:
      // x log x - (x+1) log((x+1)/2) with r - softplus(r) = -softplus(-r).
      return std::exp(r) * (kLog2 - softplus(-r)) - (softplus(r) - kLog2);
    case Divergence::PearsonChi2: {
      const double d = std::expm1(r);
      return d * d;
    }
    case Divergence::SquaredHellinger: {
      const double d = std::expm1(0.5 * r);
      return d * d;
    }
  }
  return 0.0;
}

double f_balanced_from_logratio(const Kernel& k, double r) {
  if (r <= 0.0) return f_from_logratio(k, r) / (1.0 + std::exp(r));
  // r > 0: divide through by e^r first; g = f(e^r) e^{-r}.
  double g = 0.0;
  switch (k.id) {
    case Divergence::KL:
      g = r;
      break;
    case Divergence::ReverseKL:
      g = -r * std::exp(-r);
      break;
    case Divergence::JensenShannon:
      g = (kLog2 - softplus(-r)) - std::exp(-r) * (softplus(r) - kLog2);
      break;
    case Divergence::PearsonChi2:
      g = std::expm1(r) * -std::expm1(-r);
      break;
    case Divergence::SquaredHellinger: {
      const double d = std::expm1(-0.5 * r);
      g = d * d;
      break;
    }
  }
  return g / (1.0 + std::exp(-r));
}

}  // namespace fgm::fdiv
