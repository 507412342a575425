#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fgm/errors.hpp"

// Reverse-mode differentiation over a define-by-run tape of dense matrices.
//
// Every primitive appends one node holding its value; backward() walks the
// tape in reverse id order, so parents always precede children. Broadcasting
// is limited to scalar (1x1) operands of add/sub/mul; everything else needs
// an explicit shape op such as repeat_rows.

namespace fgm::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Parameter partition of the joint model: generator, inference network,
/// density estimator.
enum class Group : std::uint8_t { Theta = 0, Phi = 1, Eta = 2 };

inline constexpr std::size_t kNumGroups = 3;

std::string_view group_name(Group g);

struct ParamId {
  std::size_t index = 0;
};

struct Parameter {
  std::string name;
  Group group = Group::Theta;
  Matrix value;
};

/// Named parameter matrices. Names are unique, and a parameter's group is
/// fixed when it is added.
class ParameterStore {
 public:
  ParamId add(std::string name, Group group, Matrix init);

  std::size_t size() const { return params_.size(); }
  const Parameter& operator[](ParamId id) const { return params_.at(id.index); }
  const std::vector<Parameter>& parameters() const { return params_; }

  Matrix& value(ParamId id) { return params_.at(id.index).value; }
  const Matrix& value(ParamId id) const { return params_.at(id.index).value; }

  std::optional<ParamId> find(std::string_view name) const;

  /// Total scalar count of a group.
  std::size_t group_size(Group g) const;

  /// Copies values from a store with identical names, groups and shapes.
  void assign_from(const ParameterStore& other);

  /// Binary checkpoint: "FGM1", u32 version, then one record per parameter
  /// (u32 name length, UTF-8 name, u8 group, u32 rows, u32 cols, row-major
  /// little-endian f64 values).
  void save(std::ostream& out) const;
  static ParameterStore load(std::istream& in);

  static constexpr std::uint32_t kCheckpointVersion = 1;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

enum class Op : std::uint8_t {
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  MatMul,
  Scale,
  AddScalar,
  Exp,
  Log,
  Tanh,
  Softplus,
  Square,
  Clamp,
  Neg,
  Sum,
  Mean,
  RowSum,
  RowLogSumExp,
  SliceCols,
  ConcatCols,
  RepeatRows,
};

class Tape;

/// Scalar and index operands of a tape node.
struct NodeAux {
  double s0 = 0.0;
  double s1 = 0.0;
  Eigen::Index i0 = 0;
  Eigen::Index i1 = 0;
};

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  explicit Tape(const ParameterStore& store) : store_(&store) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf treated as data: no gradient flows to it.
  Var constant(Matrix value);
  /// Differentiable leaf outside the store (gradient via grad()).
  Var variable(Matrix value);
  Var scalar(double value);

  /// Leaf bound to a store parameter; repeated calls return the same node.
  Var param(ParamId id);

  /// Reverse sweep from a 1x1 root. Clears gradients from any earlier sweep.
  void backward(Var root);

  /// Gradient of the last backward root w.r.t. a node (zeros if unreached
  /// or if the node depends on no parameter or variable).
  Matrix grad(Var v) const;

  /// Gradients for every store parameter, in store order. Parameters the
  /// root does not depend on get zero matrices.
  std::vector<Matrix> param_gradients() const;

  std::size_t size() const { return nodes_.size(); }
  const ParameterStore* store() const { return store_; }

  // Used by the primitive free functions.
  using Aux = NodeAux;

  Var push(Op op, Matrix value, int a = -1, int b = -1, Aux aux = {});
  const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

 private:
  struct Node {
    Op op = Op::Constant;
    int a = -1;
    int b = -1;
    Matrix value;
    Aux aux;
    int param = -1;
    bool needs_grad = false;
  };

  bool wants(int id) const;
  void accumulate(int id, Matrix g);
  void propagate(const Node& node, const Matrix& g);

  const ParameterStore* store_ = nullptr;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
  std::vector<Matrix> grads_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
/// Matrix times column vector.
Var matvec(Var a, Var v);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
/// log(1 + e^a), stable for large |a|.
Var softplus(Var a);
Var square(Var a);
/// Hard clamp; gradient passes only where lo <= a <= hi.
Var clamp(Var a, double lo, double hi);
Var neg(Var a);
Var sum(Var a);
Var mean(Var a);
/// Sums each row, giving a column vector.
Var row_sum(Var a);
/// Row-wise log-sum-exp, giving a column vector.
Var row_logsumexp(Var a);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(Var a, Var b);
/// Stacks a single row n times.
Var repeat_rows(Var row, Eigen::Index n);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }

}  // namespace fgm::ad
