#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fgm/autodiff.hpp"
#include "fgm/random.hpp"

// The three networks of the joint objective: generator p(x, z) = p(z) p(x|z),
// inference network q(z|x), and a normalized density estimator p_eta(x).
// Batches are row-major in the sense that each row is one sample; every
// log-density comes back as a (batch x 1) column.

namespace fgm::models {

using ad::Matrix;
using ad::Var;
using ad::Vector;

inline constexpr double kLogStdMin = -7.0;
inline constexpr double kLogStdMax = 7.0;
inline constexpr double kFlowScaleMax = 4.0;

/// Diagonal Gaussian as plain values. log_std is clamped to [-7, 7].
class DiagonalGaussianParams {
 public:
  DiagonalGaussianParams(Vector mean, Vector log_std);

  const Vector& mean() const { return mean_; }
  const Vector& log_std() const { return log_std_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  Vector mean_;
  Vector log_std_;
};

double gaussian_log_prob(const DiagonalGaussianParams& params, const Vector& v);
Vector gaussian_rsample(const DiagonalGaussianParams& params, const Vector& noise);

/// Tape versions; mean, log_std and v/noise are (batch x d).
Var gaussian_log_prob(Var mean, Var log_std, Var v);
Var gaussian_rsample(Var mean, Var log_std, Var noise);
Var standard_normal_log_prob(Var v);

/// Fully connected tanh network; the last layer is affine. An empty hidden
/// list gives a single affine map.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ad::ParameterStore& store, const std::string& prefix, ad::Group group, int in_dim,
      const std::vector<int>& hidden, int out_dim, Rng& rng, bool zero_final = false);

  Var forward(ad::Tape& tape, Var x) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  std::size_t n_layers() const { return weights_.size(); }
  ad::ParamId weight(std::size_t layer) const { return weights_.at(layer); }
  ad::ParamId bias(std::size_t layer) const { return biases_.at(layer); }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  std::vector<ad::ParamId> weights_;
  std::vector<ad::ParamId> biases_;
};

struct GaussianVars {
  Var mean;
  Var log_std;
};

/// Network output split into mean and clamped log-std halves.
GaussianVars gaussian_head(Var net_output, int dim);

class GenerativeModel {
 public:
  GenerativeModel() = default;
  /// Conditional network z -> (mean, log_std) over x, parameters in theta.
  GenerativeModel(ad::ParameterStore& store, Rng& rng, int x_dim, int z_dim, const std::vector<int>& hidden,
                  const std::string& prefix = "gen");
  /// Wraps an existing network (used by the linear-Gaussian constructor).
  GenerativeModel(Mlp net, int x_dim, int z_dim);

  int x_dim() const { return x_dim_; }
  int z_dim() const { return z_dim_; }
  const Mlp& net() const { return net_; }

  GaussianVars conditional(ad::Tape& tape, Var z) const;
  /// log p(z) + log p(x|z).
  Var joint_log_prob(ad::Tape& tape, Var x, Var z) const;
  Var rsample_x(ad::Tape& tape, Var z, Var noise) const;

  struct JointSample {
    Var x;
    Var log_joint;  ///< log p(z) + log p(x|z)
  };
  /// x ~ p(x|z) by reparameterization, with the joint density of (x, z),
  /// sharing one pass through the conditional network.
  JointSample rsample_joint(ad::Tape& tape, Var z, Var noise) const;

  /// Ancestral samples, values only.
  Matrix sample(const ad::ParameterStore& store, Eigen::Index n, Rng& rng) const;

 private:
  Mlp net_;
  int x_dim_ = 0;
  int z_dim_ = 0;
};

/// q(z|x): anything that can score and reparameterize latent codes.
class Posterior {
 public:
  virtual ~Posterior() = default;
  virtual int latent_dim() const = 0;
  virtual Var log_prob(ad::Tape& tape, Var z, Var x) const = 0;
  virtual Var rsample(ad::Tape& tape, Var x, Var noise) const = 0;

  struct Sample {
    Var z;
    Var log_prob;
  };
  virtual Sample rsample_with_log_prob(ad::Tape& tape, Var x, Var noise) const {
    Var z = rsample(tape, x, noise);
    return {z, log_prob(tape, z, x)};
  }
};

class InferenceModel final : public Posterior {
 public:
  InferenceModel() = default;
  InferenceModel(ad::ParameterStore& store, Rng& rng, int x_dim, int z_dim, const std::vector<int>& hidden,
                 const std::string& prefix = "inf");
  InferenceModel(Mlp net, int x_dim, int z_dim);

  int latent_dim() const override { return z_dim_; }
  int x_dim() const { return x_dim_; }
  const Mlp& net() const { return net_; }

  GaussianVars conditional(ad::Tape& tape, Var x) const;
  Var log_prob(ad::Tape& tape, Var z, Var x) const override;
  Var rsample(ad::Tape& tape, Var x, Var noise) const override;
  Sample rsample_with_log_prob(ad::Tape& tape, Var x, Var noise) const override;

 private:
  Mlp net_;
  int x_dim_ = 0;
  int z_dim_ = 0;
};

/// Exactly normalized density over x.
class DensityModel {
 public:
  virtual ~DensityModel() = default;
  virtual int dim() const = 0;
  virtual Var log_prob(ad::Tape& tape, Var x) const = 0;
};

/// Affine coupling flow over a standard normal base. Layer l transforms the
/// active half A_l given the passive half P_l:
///   x_A = u_A * exp(s(u_P)) + t(u_P),   x_P = u_P,
/// with A_l alternating between the leading floor(d/2) and the trailing
/// coordinates. s is clamped to [-4, 4].
class FlowDensityEstimator final : public DensityModel {
 public:
  struct Layer {
    Mlp scale;
    Mlp shift;
    Eigen::Index active_start = 0;
    Eigen::Index active_count = 0;
    Eigen::Index passive_start = 0;
    Eigen::Index passive_count = 0;
  };

  FlowDensityEstimator() = default;
  /// Final layers of the scale and shift nets start at zero (identity map).
  FlowDensityEstimator(ad::ParameterStore& store, Rng& rng, int dim, int n_layers, const std::vector<int>& hidden,
                       const std::string& prefix = "flow");

  int dim() const override { return dim_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Var log_prob(ad::Tape& tape, Var x) const override;
  Var forward(ad::Tape& tape, Var u) const;

  struct InverseResult {
    Var u;
    Var log_det;  ///< log|det d(inverse)/dx| per row
  };
  InverseResult inverse(ad::Tape& tape, Var x) const;

 private:
  Var layer_scale(ad::Tape& tape, const Layer& layer, Var passive) const;

  int dim_ = 0;
  std::vector<Layer> layers_;
};

/// Mixture of diagonal Gaussians with softmax weights; the estimator used
/// when x is one-dimensional and coupling layers have nothing to split.
class MixtureDensityEstimator final : public DensityModel {
 public:
  MixtureDensityEstimator(ad::ParameterStore& store, Rng& rng, int dim, int n_components,
                          const std::string& prefix = "mix");

  int dim() const override { return dim_; }
  int n_components() const { return n_components_; }
  Var log_prob(ad::Tape& tape, Var x) const override;

 private:
  int dim_ = 0;
  int n_components_ = 0;
  ad::ParamId logits_;
  ad::ParamId means_;
  ad::ParamId log_stds_;
};

struct DensityConfig {
  int n_flow_layers = 4;
  std::vector<int> flow_hidden{64, 64};
  int mixture_components = 8;
};

/// Flow for dim >= 2, mixture for dim == 1.
std::unique_ptr<DensityModel> make_density_estimator(ad::ParameterStore& store, Rng& rng, int dim,
                                                     const DensityConfig& config);

// Value-level conveniences over a fresh tape.
double joint_log_prob_gen(const GenerativeModel& gen, const ad::ParameterStore& store, const Vector& x,
                          const Vector& z);
double inference_log_prob(const InferenceModel& inf, const ad::ParameterStore& store, const Vector& z,
                          const Vector& x);
Vector inference_sample(const InferenceModel& inf, const ad::ParameterStore& store, const Vector& x,
                        const Vector& noise);
Vector density_log_prob(const DensityModel& est, const ad::ParameterStore& store, const Matrix& x);
double flow_log_prob(const FlowDensityEstimator& est, const ad::ParameterStore& store, const Vector& x);
Matrix flow_forward(const FlowDensityEstimator& est, const ad::ParameterStore& store, const Matrix& u);
Matrix flow_inverse(const FlowDensityEstimator& est, const ad::ParameterStore& store, const Matrix& x);

}  // namespace fgm::models
