#include "fgm/analytic.hpp"

#include <cmath>

namespace fgm::analytic {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;

Matrix lower_cholesky(const Matrix& cov, const char* what) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": covariance is not symmetric positive definite");
  }
  return llt.matrixL();
}

}  // namespace

void LinearGaussianSpec::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("linear-Gaussian spec: sigma must be positive");
  if (A.size() == 0 || !A.allFinite()) throw DomainError("linear-Gaussian spec: A must be nonempty and finite");
  if (b.size() != A.rows() || !b.allFinite()) {
    throw DomainError("linear-Gaussian spec: b must be finite with one entry per row of A");
  }
}

Matrix marginal_covariance(const LinearGaussianSpec& spec) {
  spec.validate();
  return spec.A * spec.A.transpose() + spec.sigma * spec.sigma * Matrix::Identity(spec.x_dim(), spec.x_dim());
}

Vector marginal_log_prob(const LinearGaussianSpec& spec, const Matrix& x) {
  if (x.cols() != spec.x_dim()) throw StructuralError("marginal_log_prob: dimension mismatch");
  const Matrix L = lower_cholesky(marginal_covariance(spec), "marginal_log_prob");
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  const Matrix centered = (x.rowwise() - spec.b.transpose()).transpose();
  const Matrix w = L.triangularView<Eigen::Lower>().solve(centered);
  const double d = spec.x_dim();
  return (-0.5 * (d * kLog2Pi + log_det) - 0.5 * w.colwise().squaredNorm().array()).matrix().transpose();
}

double marginal_log_prob(const LinearGaussianSpec& spec, const Vector& x) {
  return marginal_log_prob(spec, Matrix(x.transpose()))(0);
}

Gaussian::Gaussian(Vector mean, Matrix cov)
    : mean_(std::move(mean)), cov_(std::move(cov)), chol_(lower_cholesky(cov_, "Gaussian")) {
  if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
    throw StructuralError("Gaussian: covariance shape does not match the mean");
  }
}

double Gaussian::log_prob(const Vector& v) const {
  if (v.size() != mean_.size()) throw StructuralError("Gaussian::log_prob: dimension mismatch");
  const Vector w = chol_.triangularView<Eigen::Lower>().solve(v - mean_);
  return -0.5 * (dim() * kLog2Pi + w.squaredNorm()) - chol_.diagonal().array().log().sum();
}

Vector Gaussian::sample(const Vector& noise) const {
  if (noise.size() != mean_.size()) throw StructuralError("Gaussian::sample: dimension mismatch");
  return mean_ + chol_ * noise;
}

Matrix posterior_covariance(const LinearGaussianSpec& spec) {
  spec.validate();
  const Matrix precision = Matrix::Identity(spec.z_dim(), spec.z_dim()) +
                           spec.A.transpose() * spec.A / (spec.sigma * spec.sigma);
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("posterior_params: singular posterior precision");
  return llt.solve(Matrix::Identity(spec.z_dim(), spec.z_dim()));
}

Gaussian posterior_params(const LinearGaussianSpec& spec, const Vector& x) {
  if (x.size() != spec.x_dim()) throw StructuralError("posterior_params: dimension mismatch");
  Matrix cov = posterior_covariance(spec);
  Vector mean = cov * spec.A.transpose() * (x - spec.b) / (spec.sigma * spec.sigma);
  return Gaussian(std::move(mean), std::move(cov));
}

// ---------------------------------------------------------------------------

MarginalDensity::MarginalDensity(LinearGaussianSpec spec)
    : spec_(std::move(spec)), chol_(lower_cholesky(marginal_covariance(spec_), "MarginalDensity")) {}

Vector MarginalDensity::log_prob(const Matrix& x) const { return marginal_log_prob(spec_, x); }

Matrix MarginalDensity::sample(Eigen::Index n, Rng& rng) const {
  const Matrix eps = standard_normal(rng, n, spec_.x_dim());
  return (eps * chol_.transpose()).rowwise() + spec_.b.transpose();
}

// ---------------------------------------------------------------------------

ExactPosterior::ExactPosterior(const LinearGaussianSpec& spec) : spec_(spec) {
  const Matrix cov = posterior_covariance(spec_);
  const Matrix gain = cov * spec_.A.transpose() / (spec_.sigma * spec_.sigma);
  gain_t_ = gain.transpose();
  const Matrix L = lower_cholesky(cov, "ExactPosterior");
  chol_t_ = L.transpose();
  chol_inv_t_ = L.triangularView<Eigen::Lower>().solve(Matrix::Identity(L.rows(), L.cols())).transpose();
  log_det_chol_ = L.diagonal().array().log().sum();
}

ad::Var ExactPosterior::mean(ad::Tape& tape, ad::Var x) const {
  if (x.cols() != spec_.x_dim()) throw StructuralError("ExactPosterior: x dimension mismatch");
  const Matrix offset = spec_.b.transpose() * gain_t_;
  return ad::matmul(x, tape.constant(gain_t_)) - ad::repeat_rows(tape.constant(offset), x.rows());
}

ad::Var ExactPosterior::log_prob(ad::Tape& tape, ad::Var z, ad::Var x) const {
  ad::Var w = ad::matmul(z - mean(tape, x), tape.constant(chol_inv_t_));
  const double d = spec_.z_dim();
  return ad::row_sum(-0.5 * ad::square(w)) - (0.5 * d * kLog2Pi + log_det_chol_);
}

ad::Var ExactPosterior::rsample(ad::Tape& tape, ad::Var x, ad::Var noise) const {
  return mean(tape, x) + ad::matmul(noise, tape.constant(chol_t_));
}

// ---------------------------------------------------------------------------

models::GenerativeModel make_generative_model(const LinearGaussianSpec& spec, ad::ParameterStore& store,
                                              const std::string& prefix) {
  spec.validate();
  Rng unused(0);
  models::Mlp net(store, prefix, ad::Group::Theta, spec.z_dim(), {}, 2 * spec.x_dim(), unused);
  Matrix w = Matrix::Zero(spec.z_dim(), 2 * spec.x_dim());
  w.leftCols(spec.x_dim()) = spec.A.transpose();
  Matrix b(1, 2 * spec.x_dim());
  b << spec.b.transpose(), Matrix::Constant(1, spec.x_dim(), std::log(spec.sigma));
  store.value(net.weight(0)) = w;
  store.value(net.bias(0)) = b;
  return models::GenerativeModel(std::move(net), spec.x_dim(), spec.z_dim());
}

models::InferenceModel make_optimal_inference(const LinearGaussianSpec& spec, ad::ParameterStore& store,
                                              const std::string& prefix) {
  const Matrix cov = posterior_covariance(spec);
  const Matrix off = cov - Matrix(cov.diagonal().asDiagonal());
  if (off.cwiseAbs().maxCoeff() > 1e-12 * cov.diagonal().maxCoeff()) {
    throw DomainError("make_optimal_inference: posterior covariance is not diagonal (A needs orthogonal columns)");
  }
  const Matrix gain = cov * spec.A.transpose() / (spec.sigma * spec.sigma);
  Rng unused(0);
  models::Mlp net(store, prefix, ad::Group::Phi, spec.x_dim(), {}, 2 * spec.z_dim(), unused);
  Matrix w = Matrix::Zero(spec.x_dim(), 2 * spec.z_dim());
  w.leftCols(spec.z_dim()) = gain.transpose();
  Matrix b(1, 2 * spec.z_dim());
  b << -(gain * spec.b).transpose(), (0.5 * cov.diagonal().array().log()).matrix().transpose();
  store.value(net.weight(0)) = w;
  store.value(net.bias(0)) = b;
  return models::InferenceModel(std::move(net), spec.x_dim(), spec.z_dim());
}

models::FlowDensityEstimator make_gaussian_flow(const Vector& mean, const Matrix& cov, ad::ParameterStore& store,
                                                const std::string& prefix) {
  if (mean.size() != 2 || cov.rows() != 2 || cov.cols() != 2) {
    throw StructuralError("make_gaussian_flow: only the 2-D case is supported");
  }
  const Matrix L = lower_cholesky(cov, "make_gaussian_flow");
  const double log_l11 = std::log(L(0, 0));
  const double log_l22 = std::log(L(1, 1));
  if (std::abs(log_l11) > models::kFlowScaleMax || std::abs(log_l22) > models::kFlowScaleMax) {
    throw DomainError("make_gaussian_flow: covariance scale outside the flow's clamp range");
  }
  Rng unused(0);
  models::FlowDensityEstimator flow(store, unused, 2, 2, {}, prefix);
  const auto& layers = flow.layers();
  // Layer 0 (active x0 | passive u1): x0 = l11 * u0 + m0.
  store.value(layers[0].scale.bias(0))(0, 0) = log_l11;
  store.value(layers[0].shift.bias(0))(0, 0) = mean(0);
  // Layer 1 (active x1 | passive x0): x1 = l22 * u1 + c * x0 + (m1 - c * m0),
  // which equals l21 * u0 + l22 * u1 + m1 with c = l21 / l11.
  const double c = L(1, 0) / L(0, 0);
  store.value(layers[1].scale.bias(0))(0, 0) = log_l22;
  store.value(layers[1].shift.weight(0))(0, 0) = c;
  store.value(layers[1].shift.bias(0))(0, 0) = mean(1) - c * mean(0);
  return flow;
}

LinearGaussianSpec random_orthogonal_spec(Rng& rng, int x_dim, int z_dim) {
  if (z_dim > x_dim) throw DomainError("random_orthogonal_spec: needs z_dim <= x_dim");
  Eigen::HouseholderQR<Matrix> qr(standard_normal(rng, x_dim, x_dim));
  const Matrix q = qr.householderQ() * Matrix::Identity(x_dim, z_dim);
  const Vector scales = uniform(rng, z_dim, 1, 0.5, 1.5);
  LinearGaussianSpec spec;
  spec.A = q * scales.asDiagonal();
  spec.b = uniform(rng, x_dim, 1, -0.5, 0.5);
  spec.sigma = uniform(rng, 1, 1, 0.4, 0.8)(0, 0);
  return spec;
}

}  // namespace fgm::analytic
