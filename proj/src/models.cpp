#include "fgm/models.hpp"

#include <cmath>
#include <numbers>

namespace fgm::models {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

Var as_row(ad::Tape& tape, const Vector& v) { return tape.constant(v.transpose()); }

void require_dim(const char* what, Eigen::Index got, Eigen::Index want) {
  if (got != want) {
    throw StructuralError(std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                          std::to_string(got));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Diagonal Gaussian

DiagonalGaussianParams::DiagonalGaussianParams(Vector mean, Vector log_std)
    : mean_(std::move(mean)), log_std_(std::move(log_std)) {
  require_dim("DiagonalGaussianParams", log_std_.size(), mean_.size());
  if (!mean_.allFinite() || !log_std_.allFinite()) {
    throw DomainError("DiagonalGaussianParams: entries must be finite");
  }
  log_std_ = log_std_.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

double gaussian_log_prob(const DiagonalGaussianParams& params, const Vector& v) {
  require_dim("gaussian_log_prob", v.size(), params.dim());
  const Eigen::ArrayXd z = (v - params.mean()).array() * (-params.log_std().array()).exp();
  return (-params.log_std().array() - kHalfLog2Pi - 0.5 * z.square()).sum();
}

Vector gaussian_rsample(const DiagonalGaussianParams& params, const Vector& noise) {
  require_dim("gaussian_rsample", noise.size(), params.dim());
  return params.mean() + (params.log_std().array().exp() * noise.array()).matrix();
}

Var gaussian_log_prob(Var mean, Var log_std, Var v) {
  if (v.rows() != mean.rows() || v.cols() != mean.cols()) {
    throw StructuralError("gaussian_log_prob: sample shape does not match the mean");
  }
  const double d = static_cast<double>(v.cols());
  Var z = ad::mul(v - mean, ad::exp(-log_std));
  return ad::row_sum(-log_std - 0.5 * ad::square(z)) - d * kHalfLog2Pi;
}

Var gaussian_rsample(Var mean, Var log_std, Var noise) {
  if (noise.rows() != mean.rows() || noise.cols() != mean.cols()) {
    throw StructuralError("gaussian_rsample: noise shape does not match the mean");
  }
  return mean + ad::mul(ad::exp(log_std), noise);
}

Var standard_normal_log_prob(Var v) {
  const double d = static_cast<double>(v.cols());
  return ad::row_sum(-0.5 * ad::square(v)) - d * kHalfLog2Pi;
}

GaussianVars gaussian_head(Var net_output, int dim) {
  if (net_output.cols() != 2 * dim) {
    throw StructuralError("gaussian_head: network output has " + std::to_string(net_output.cols()) +
                          " columns, expected " + std::to_string(2 * dim));
  }
  return {ad::slice_cols(net_output, 0, dim), ad::clamp(ad::slice_cols(net_output, dim, dim), kLogStdMin, kLogStdMax)};
}

// ---------------------------------------------------------------------------
// MLP

Mlp::Mlp(ad::ParameterStore& store, const std::string& prefix, ad::Group group, int in_dim,
         const std::vector<int>& hidden, int out_dim, Rng& rng, bool zero_final)
    : in_dim_(in_dim), out_dim_(out_dim) {
  std::vector<int> sizes{in_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out_dim);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const bool last = l + 2 == sizes.size();
    Matrix w;
    if (last && zero_final) {
      w = Matrix::Zero(fan_in, fan_out);
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      w = uniform(rng, fan_in, fan_out, -a, a);
    }
    const std::string tag = prefix + ".l" + std::to_string(l);
    weights_.push_back(store.add(tag + ".w", group, std::move(w)));
    biases_.push_back(store.add(tag + ".b", group, Matrix::Zero(1, fan_out)));
  }
}

Var Mlp::forward(ad::Tape& tape, Var x) const {
  if (x.cols() != in_dim_) {
    throw StructuralError("Mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(in_dim_));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::matmul(h, tape.param(weights_[l])) + ad::repeat_rows(tape.param(biases_[l]), h.rows());
    if (l + 1 < weights_.size()) h = ad::tanh(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Generator

GenerativeModel::GenerativeModel(ad::ParameterStore& store, Rng& rng, int x_dim, int z_dim,
                                 const std::vector<int>& hidden, const std::string& prefix)
    : net_(store, prefix, ad::Group::Theta, z_dim, hidden, 2 * x_dim, rng), x_dim_(x_dim), z_dim_(z_dim) {}

GenerativeModel::GenerativeModel(Mlp net, int x_dim, int z_dim) : net_(std::move(net)), x_dim_(x_dim), z_dim_(z_dim) {
  if (net_.in_dim() != z_dim || net_.out_dim() != 2 * x_dim) {
    throw StructuralError("GenerativeModel: network shape does not match dimensions");
  }
}

GaussianVars GenerativeModel::conditional(ad::Tape& tape, Var z) const {
  return gaussian_head(net_.forward(tape, z), x_dim_);
}

Var GenerativeModel::joint_log_prob(ad::Tape& tape, Var x, Var z) const {
  if (x.cols() != x_dim_ || z.cols() != z_dim_ || x.rows() != z.rows()) {
    throw StructuralError("joint_log_prob: (x, z) shapes do not match the generator");
  }
  const GaussianVars c = conditional(tape, z);
  return standard_normal_log_prob(z) + gaussian_log_prob(c.mean, c.log_std, x);
}

Var GenerativeModel::rsample_x(ad::Tape& tape, Var z, Var noise) const {
  const GaussianVars c = conditional(tape, z);
  return gaussian_rsample(c.mean, c.log_std, noise);
}

GenerativeModel::JointSample GenerativeModel::rsample_joint(ad::Tape& tape, Var z, Var noise) const {
  if (z.cols() != z_dim_) throw StructuralError("rsample_joint: latent dimension mismatch");
  const GaussianVars c = conditional(tape, z);
  Var x = gaussian_rsample(c.mean, c.log_std, noise);
  return {x, standard_normal_log_prob(z) + gaussian_log_prob(c.mean, c.log_std, x)};
}

Matrix GenerativeModel::sample(const ad::ParameterStore& store, Eigen::Index n, Rng& rng) const {
  ad::Tape tape(store);
  Var z = tape.constant(standard_normal(rng, n, z_dim_));
  Var eps = tape.constant(standard_normal(rng, n, x_dim_));
  return rsample_x(tape, z, eps).value();
}

// ---------------------------------------------------------------------------
// Inference network

InferenceModel::InferenceModel(ad::ParameterStore& store, Rng& rng, int x_dim, int z_dim,
                               const std::vector<int>& hidden, const std::string& prefix)
    : net_(store, prefix, ad::Group::Phi, x_dim, hidden, 2 * z_dim, rng), x_dim_(x_dim), z_dim_(z_dim) {}

InferenceModel::InferenceModel(Mlp net, int x_dim, int z_dim) : net_(std::move(net)), x_dim_(x_dim), z_dim_(z_dim) {
  if (net_.in_dim() != x_dim || net_.out_dim() != 2 * z_dim) {
    throw StructuralError("InferenceModel: network shape does not match dimensions");
  }
}

GaussianVars InferenceModel::conditional(ad::Tape& tape, Var x) const {
  return gaussian_head(net_.forward(tape, x), z_dim_);
}

Var InferenceModel::log_prob(ad::Tape& tape, Var z, Var x) const {
  const GaussianVars c = conditional(tape, x);
  return gaussian_log_prob(c.mean, c.log_std, z);
}

Var InferenceModel::rsample(ad::Tape& tape, Var x, Var noise) const {
  const GaussianVars c = conditional(tape, x);
  return gaussian_rsample(c.mean, c.log_std, noise);
}

Posterior::Sample InferenceModel::rsample_with_log_prob(ad::Tape& tape, Var x, Var noise) const {
  const GaussianVars c = conditional(tape, x);
  Var z = gaussian_rsample(c.mean, c.log_std, noise);
  return {z, gaussian_log_prob(c.mean, c.log_std, z)};
}

// ---------------------------------------------------------------------------
// Coupling flow

FlowDensityEstimator::FlowDensityEstimator(ad::ParameterStore& store, Rng& rng, int dim, int n_layers,
                                           const std::vector<int>& hidden, const std::string& prefix)
    : dim_(dim) {
  if (dim < 2) throw StructuralError("coupling flow needs dimension >= 2");
  if (n_layers < 1) throw StructuralError("coupling flow needs at least one layer");
  const Eigen::Index half = dim / 2;
  for (int l = 0; l < n_layers; ++l) {
    Layer layer;
    if (l % 2 == 0) {
      layer.active_start = 0;
      layer.active_count = half;
      layer.passive_start = half;
      layer.passive_count = dim - half;
    } else {
      layer.active_start = half;
      layer.active_count = dim - half;
      layer.passive_start = 0;
      layer.passive_count = half;
    }
    const std::string tag = prefix + ".c" + std::to_string(l);
    const int in = static_cast<int>(layer.passive_count);
    const int out = static_cast<int>(layer.active_count);
    layer.scale = Mlp(store, tag + ".s", ad::Group::Eta, in, hidden, out, rng, true);
    layer.shift = Mlp(store, tag + ".t", ad::Group::Eta, in, hidden, out, rng, true);
    layers_.push_back(std::move(layer));
  }
}

Var FlowDensityEstimator::layer_scale(ad::Tape& tape, const Layer& layer, Var passive) const {
  return ad::clamp(layer.scale.forward(tape, passive), -kFlowScaleMax, kFlowScaleMax);
}

Var FlowDensityEstimator::forward(ad::Tape& tape, Var u) const {
  if (u.cols() != dim_) throw StructuralError("flow_forward: dimension mismatch");
  Var v = u;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Var active = ad::slice_cols(v, layer.active_start, layer.active_count);
    Var passive = ad::slice_cols(v, layer.passive_start, layer.passive_count);
    Var s = layer_scale(tape, layer, passive);
    Var t = layer.shift.forward(tape, passive);
    Var out = ad::mul(active, ad::exp(s)) + t;
    v = layer.active_start == 0 ? ad::concat_cols(out, passive) : ad::concat_cols(passive, out);
    if (!v.value().allFinite()) {
      throw NumericalError("flow_forward: non-finite output at layer " + std::to_string(l));
    }
  }
  return v;
}

FlowDensityEstimator::InverseResult FlowDensityEstimator::inverse(ad::Tape& tape, Var x) const {
  if (x.cols() != dim_) throw StructuralError("flow_inverse: dimension mismatch");
  Var v = x;
  Var log_det = tape.constant(Matrix::Zero(x.rows(), 1));
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Layer& layer = layers_[i];
    Var active = ad::slice_cols(v, layer.active_start, layer.active_count);
    Var passive = ad::slice_cols(v, layer.passive_start, layer.passive_count);
    Var s = layer_scale(tape, layer, passive);
    Var t = layer.shift.forward(tape, passive);
    Var out = ad::mul(active - t, ad::exp(-s));
    log_det = log_det - ad::row_sum(s);
    v = layer.active_start == 0 ? ad::concat_cols(out, passive) : ad::concat_cols(passive, out);
    if (!v.value().allFinite()) {
      throw NumericalError("flow_inverse: non-finite intermediate at layer " + std::to_string(i));
    }
  }
  return {v, log_det};
}

Var FlowDensityEstimator::log_prob(ad::Tape& tape, Var x) const {
  const InverseResult inv = inverse(tape, x);
  return standard_normal_log_prob(inv.u) + inv.log_det;
}

// ---------------------------------------------------------------------------
// Mixture estimator

MixtureDensityEstimator::MixtureDensityEstimator(ad::ParameterStore& store, Rng& rng, int dim, int n_components,
                                                 const std::string& prefix)
    : dim_(dim), n_components_(n_components) {
  if (dim < 1 || n_components < 1) throw StructuralError("mixture estimator needs dim >= 1 and components >= 1");
  logits_ = store.add(prefix + ".logits", ad::Group::Eta, Matrix::Zero(1, n_components));
  // Component c occupies columns [c*dim, (c+1)*dim).
  means_ = store.add(prefix + ".means", ad::Group::Eta, standard_normal(rng, 1, n_components * dim));
  log_stds_ = store.add(prefix + ".log_stds", ad::Group::Eta, Matrix::Zero(1, n_components * dim));
}

Var MixtureDensityEstimator::log_prob(ad::Tape& tape, Var x) const {
  if (x.cols() != dim_) throw StructuralError("mixture log_prob: dimension mismatch");
  const Eigen::Index n = x.rows();
  Var logits = tape.param(logits_);
  Var log_weights = logits - ad::row_logsumexp(logits);
  Var means = tape.param(means_);
  Var log_stds = ad::clamp(tape.param(log_stds_), kLogStdMin, kLogStdMax);
  Var per_component;
  for (int c = 0; c < n_components_; ++c) {
    Var mu = ad::repeat_rows(ad::slice_cols(means, c * dim_, dim_), n);
    Var ls = ad::repeat_rows(ad::slice_cols(log_stds, c * dim_, dim_), n);
    Var lp = gaussian_log_prob(mu, ls, x);
    per_component = c == 0 ? lp : ad::concat_cols(per_component, lp);
  }
  return ad::row_logsumexp(per_component + ad::repeat_rows(log_weights, n));
}

std::unique_ptr<DensityModel> make_density_estimator(ad::ParameterStore& store, Rng& rng, int dim,
                                                     const DensityConfig& config) {
  if (dim >= 2) {
    return std::make_unique<FlowDensityEstimator>(store, rng, dim, config.n_flow_layers, config.flow_hidden);
  }
  return std::make_unique<MixtureDensityEstimator>(store, rng, dim, config.mixture_components);
}

// ---------------------------------------------------------------------------
// Value-level conveniences

double joint_log_prob_gen(const GenerativeModel& gen, const ad::ParameterStore& store, const Vector& x,
                          const Vector& z) {
  require_dim("joint_log_prob_gen (x)", x.size(), gen.x_dim());
  require_dim("joint_log_prob_gen (z)", z.size(), gen.z_dim());
  ad::Tape tape(store);
  return gen.joint_log_prob(tape, as_row(tape, x), as_row(tape, z)).scalar();
}

double inference_log_prob(const InferenceModel& inf, const ad::ParameterStore& store, const Vector& z,
                          const Vector& x) {
  require_dim("inference_log_prob (x)", x.size(), inf.x_dim());
  require_dim("inference_log_prob (z)", z.size(), inf.latent_dim());
  ad::Tape tape(store);
  return inf.log_prob(tape, as_row(tape, z), as_row(tape, x)).scalar();
}

Vector inference_sample(const InferenceModel& inf, const ad::ParameterStore& store, const Vector& x,
                        const Vector& noise) {
  require_dim("inference_sample (x)", x.size(), inf.x_dim());
  require_dim("inference_sample (noise)", noise.size(), inf.latent_dim());
  ad::Tape tape(store);
  return inf.rsample(tape, as_row(tape, x), as_row(tape, noise)).value().transpose();
}

Vector density_log_prob(const DensityModel& est, const ad::ParameterStore& store, const Matrix& x) {
  ad::Tape tape(store);
  return est.log_prob(tape, tape.constant(x)).value();
}

double flow_log_prob(const FlowDensityEstimator& est, const ad::ParameterStore& store, const Vector& x) {
  require_dim("flow_log_prob", x.size(), est.dim());
  ad::Tape tape(store);
  return est.log_prob(tape, as_row(tape, x)).scalar();
}

Matrix flow_forward(const FlowDensityEstimator& est, const ad::ParameterStore& store, const Matrix& u) {
  ad::Tape tape(store);
  return est.forward(tape, tape.constant(u)).value();
}

Matrix flow_inverse(const FlowDensityEstimator& est, const ad::ParameterStore& store, const Matrix& x) {
  ad::Tape tape(store);
  return est.inverse(tape, tape.constant(x)).u.value();
}

}  // namespace fgm::models
