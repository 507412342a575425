#include "fgm/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace fgm::ad {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream s;
  s << m.rows() << "x" << m.cols();
  return s.str();
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw StructuralError("operation on a detached Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw StructuralError("operands live on different tapes");
  return tape_of(a);
}

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

// Shape rule for elementwise binary ops: equal shapes, or one 1x1 operand.
void check_elementwise(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (is_scalar(a) || is_scalar(b)) return;
  throw StructuralError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
}

template <typename F>
Matrix elementwise(const Matrix& a, const Matrix& b, F f) {
  if (is_scalar(a) && !is_scalar(b)) {
    return f(Matrix::Constant(b.rows(), b.cols(), a(0, 0)).array(), b.array()).matrix();
  }
  if (is_scalar(b) && !is_scalar(a)) {
    return f(a.array(), Matrix::Constant(a.rows(), a.cols(), b(0, 0)).array()).matrix();
  }
  return f(a.array(), b.array()).matrix();
}

// Folds a full-size gradient back onto an operand that may have been broadcast.
Matrix reduce_to(const Matrix& g, const Matrix& operand) {
  if (is_scalar(operand) && !is_scalar(g)) return Matrix::Constant(1, 1, g.sum());
  return g;
}

// tanh through the vectorized exp; absolute error stays at a few ulp of 1.
Matrix fast_tanh(const Matrix& x) {
  const Eigen::ArrayXXd t = (-2.0 * x.array().abs()).exp();
  const Eigen::ArrayXXd mag = (1.0 - t) / (1.0 + t);
  return (x.array() < 0.0).select(-mag, mag).matrix();
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw StructuralError("value() on a detached Var");
  return tape_->value_of(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (!is_scalar(v)) throw StructuralError("scalar() on a " + shape(v) + " node");
  return v(0, 0);
}

Var Tape::push(Op op, Matrix value, int a, int b, Aux aux) {
  Node node;
  node.op = op;
  node.a = a;
  node.b = b;
  node.value = std::move(value);
  node.aux = aux;
  node.needs_grad = (a >= 0 && nodes_[static_cast<std::size_t>(a)].needs_grad) ||
                    (b >= 0 && nodes_[static_cast<std::size_t>(b)].needs_grad);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) { return push(Op::Constant, std::move(value)); }

Var Tape::variable(Matrix value) {
  Var v = push(Op::Constant, std::move(value));
  nodes_.back().needs_grad = true;
  return v;
}

Var Tape::scalar(double value) { return push(Op::Constant, Matrix::Constant(1, 1, value)); }

Var Tape::param(ParamId id) {
  if (store_ == nullptr) throw StructuralError("tape has no parameter store");
  if (id.index >= store_->size()) throw StructuralError("parameter id out of range");
  if (param_nodes_.size() < store_->size()) param_nodes_.resize(store_->size(), -1);
  int& slot = param_nodes_[id.index];
  if (slot < 0) {
    Var v = push(Op::Param, store_->value(id));
    nodes_.back().param = static_cast<int>(id.index);
    nodes_.back().needs_grad = true;
    slot = v.id();
  }
  return Var(this, slot);
}

bool Tape::wants(int id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad; }

void Tape::accumulate(int id, Matrix g) {
  Matrix& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.size() == 0) {
    slot = std::move(g);
  } else {
    slot += g;
  }
}

void Tape::propagate(const Node& n, const Matrix& g) {
  const auto val = [this](int id) -> const Matrix& { return nodes_[static_cast<std::size_t>(id)].value; };
  switch (n.op) {
    case Op::Constant:
    case Op::Param:
      break;
    case Op::Add:
      if (wants(n.a)) accumulate(n.a, reduce_to(g, val(n.a)));
      if (wants(n.b)) accumulate(n.b, reduce_to(g, val(n.b)));
      break;
    case Op::Sub:
      if (wants(n.a)) accumulate(n.a, reduce_to(g, val(n.a)));
      if (wants(n.b)) accumulate(n.b, reduce_to(-g, val(n.b)));
      break;
    case Op::Mul: {
      const Matrix& a = val(n.a);
      const Matrix& b = val(n.b);
      if (wants(n.a)) accumulate(n.a, reduce_to(elementwise(g, b, [](auto x, auto y) { return x * y; }), a));
      if (wants(n.b)) accumulate(n.b, reduce_to(elementwise(g, a, [](auto x, auto y) { return x * y; }), b));
      break;
    }
    case Op::MatMul:
      if (wants(n.a)) accumulate(n.a, g * val(n.b).transpose());
      if (wants(n.b)) accumulate(n.b, val(n.a).transpose() * g);
      break;
    case Op::Scale:
      if (wants(n.a)) accumulate(n.a, n.aux.s0 * g);
      break;
    case Op::AddScalar:
      if (wants(n.a)) accumulate(n.a, g);
      break;
    case Op::Exp:
      if (wants(n.a)) accumulate(n.a, g.cwiseProduct(n.value));
      break;
    case Op::Log:
      if (wants(n.a)) accumulate(n.a, g.cwiseQuotient(val(n.a)));
      break;
    case Op::Tanh:
      if (wants(n.a)) accumulate(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
      break;
    case Op::Softplus:
      if (wants(n.a)) accumulate(n.a, g.cwiseProduct(val(n.a).unaryExpr([](double x) { return sigmoid(x); })));
      break;
    case Op::Square:
      if (wants(n.a)) accumulate(n.a, 2.0 * g.cwiseProduct(val(n.a)));
      break;
    case Op::Clamp: {
      const Matrix& a = val(n.a);
      const double lo = n.aux.s0;
      const double hi = n.aux.s1;
      Matrix ga = g;
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a(i) < lo || a(i) > hi) ga(i) = 0.0;
      }
      if (wants(n.a)) accumulate(n.a, ga);
      break;
    }
    case Op::Neg:
      if (wants(n.a)) accumulate(n.a, -g);
      break;
    case Op::Sum: {
      const Matrix& a = val(n.a);
      if (wants(n.a)) accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
      break;
    }
    case Op::Mean: {
      const Matrix& a = val(n.a);
      if (wants(n.a)) accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
      break;
    }
    case Op::RowSum:
      if (wants(n.a)) accumulate(n.a, g.replicate(1, val(n.a).cols()));
      break;
    case Op::RowLogSumExp: {
      const Matrix& a = val(n.a);
      Matrix w = (a - n.value.replicate(1, a.cols())).array().exp().matrix();
      if (wants(n.a)) accumulate(n.a, w.cwiseProduct(g.replicate(1, a.cols())));
      break;
    }
    case Op::SliceCols: {
      const Matrix& a = val(n.a);
      Matrix ga = Matrix::Zero(a.rows(), a.cols());
      ga.middleCols(n.aux.i0, n.aux.i1) = g;
      if (wants(n.a)) accumulate(n.a, ga);
      break;
    }
    case Op::ConcatCols: {
      const Eigen::Index ca = val(n.a).cols();
      if (wants(n.a)) accumulate(n.a, g.leftCols(ca));
      if (wants(n.b)) accumulate(n.b, g.rightCols(g.cols() - ca));
      break;
    }
    case Op::RepeatRows:
      if (wants(n.a)) accumulate(n.a, g.colwise().sum());
      break;
  }
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw StructuralError("backward root belongs to another tape");
  const Matrix& rv = root.value();
  if (!is_scalar(rv)) throw StructuralError("backward root must be 1x1, got " + shape(rv));
  grads_.assign(nodes_.size(), Matrix());
  grads_[static_cast<std::size_t>(root.id())] = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    // Children always have smaller ids, so this slot is not written while in use.
    const Matrix& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0 || !nodes_[static_cast<std::size_t>(id)].needs_grad) continue;
    propagate(nodes_[static_cast<std::size_t>(id)], g);
  }
}

Matrix Tape::grad(Var v) const {
  const auto id = static_cast<std::size_t>(v.id());
  if (id < grads_.size() && grads_[id].size() != 0) return grads_[id];
  const Matrix& value = nodes_.at(id).value;
  return Matrix::Zero(value.rows(), value.cols());
}

std::vector<Matrix> Tape::param_gradients() const {
  if (store_ == nullptr) throw StructuralError("tape has no parameter store");
  std::vector<Matrix> out;
  out.reserve(store_->size());
  for (std::size_t i = 0; i < store_->size(); ++i) {
    const int node = i < param_nodes_.size() ? param_nodes_[i] : -1;
    if (node >= 0 && static_cast<std::size_t>(node) < grads_.size() &&
        grads_[static_cast<std::size_t>(node)].size() != 0) {
      out.push_back(grads_[static_cast<std::size_t>(node)]);
    } else {
      const Matrix& v = store_->value(ParamId{i});
      out.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Primitives

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_elementwise("add", a.value(), b.value());
  return t.push(Op::Add, elementwise(a.value(), b.value(), [](auto x, auto y) { return x + y; }), a.id(), b.id());
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_elementwise("sub", a.value(), b.value());
  return t.push(Op::Sub, elementwise(a.value(), b.value(), [](auto x, auto y) { return x - y; }), a.id(), b.id());
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_elementwise("mul", a.value(), b.value());
  return t.push(Op::Mul, elementwise(a.value(), b.value(), [](auto x, auto y) { return x * y; }), a.id(), b.id());
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw StructuralError("matmul: inner dimensions differ, " + shape(a.value()) + " * " + shape(b.value()));
  }
  return t.push(Op::MatMul, a.value() * b.value(), a.id(), b.id());
}

Var matvec(Var a, Var v) {
  if (v.cols() != 1) throw StructuralError("matvec: right operand must be a column, got " + shape(v.value()));
  return matmul(a, v);
}

Var scale(Var a, double s) {
  Tape::Aux aux;
  aux.s0 = s;
  return tape_of(a).push(Op::Scale, s * a.value(), a.id(), -1, aux);
}

Var add_scalar(Var a, double s) {
  return tape_of(a).push(Op::AddScalar, (a.value().array() + s).matrix(), a.id());
}

Var exp(Var a) { return tape_of(a).push(Op::Exp, a.value().array().exp().matrix(), a.id()); }

Var log(Var a) {
  const Matrix& v = a.value();
  if (!(v.array() > 0.0).all()) throw DomainError("log: argument must be strictly positive");
  return tape_of(a).push(Op::Log, v.array().log().matrix(), a.id());
}

Var tanh(Var a) { return tape_of(a).push(Op::Tanh, fast_tanh(a.value()), a.id()); }

Var softplus(Var a) {
  return tape_of(a).push(Op::Softplus, a.value().unaryExpr([](double x) { return stable_softplus(x); }), a.id());
}

Var square(Var a) { return tape_of(a).push(Op::Square, a.value().array().square().matrix(), a.id()); }

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo must not exceed hi");
  Tape::Aux aux;
  aux.s0 = lo;
  aux.s1 = hi;
  return tape_of(a).push(Op::Clamp, a.value().cwiseMax(lo).cwiseMin(hi), a.id(), -1, aux);
}

Var neg(Var a) { return tape_of(a).push(Op::Neg, -a.value(), a.id()); }

Var sum(Var a) { return tape_of(a).push(Op::Sum, Matrix::Constant(1, 1, a.value().sum()), a.id()); }

Var mean(Var a) {
  if (a.value().size() == 0) throw StructuralError("mean of an empty matrix");
  return tape_of(a).push(Op::Mean, Matrix::Constant(1, 1, a.value().mean()), a.id());
}

Var row_sum(Var a) { return tape_of(a).push(Op::RowSum, a.value().rowwise().sum(), a.id()); }

Var row_logsumexp(Var a) {
  const Matrix& v = a.value();
  if (v.cols() == 0) throw StructuralError("row_logsumexp of a matrix with no columns");
  Eigen::VectorXd m = v.rowwise().maxCoeff();
  Eigen::VectorXd s = (v - m.replicate(1, v.cols())).array().exp().rowwise().sum().log().matrix();
  return tape_of(a).push(Op::RowLogSumExp, Matrix(m + s), a.id());
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw StructuralError("slice_cols: range [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside " + shape(a.value()));
  }
  Tape::Aux aux;
  aux.i0 = start;
  aux.i1 = count;
  return tape_of(a).push(Op::SliceCols, a.value().middleCols(start, count), a.id(), -1, aux);
}

Var concat_cols(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.rows() != b.rows()) {
    throw StructuralError("concat_cols: row counts differ, " + shape(a.value()) + " vs " + shape(b.value()));
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return t.push(Op::ConcatCols, std::move(out), a.id(), b.id());
}

Var repeat_rows(Var row, Eigen::Index n) {
  if (row.rows() != 1) throw StructuralError("repeat_rows: operand must be a single row, got " + shape(row.value()));
  return tape_of(row).push(Op::RepeatRows, row.value().replicate(n, 1), row.id());
}

}  // namespace fgm::ad
