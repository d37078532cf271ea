#pragma once

// Dense tensors, numeric kernels, and a reverse-mode tape for small MLPs.
//
// Every quantity is a row-major 2-D matrix: batches are B x F, vectors are
// 1 x F. Kernels are templated free functions over Eigen expressions so the
// tape and the plain (no-gradient) forward paths share one implementation
// and produce bit-identical values.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adacontrast {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Tensor = Matrix<double>;
using Mask = Matrix<bool>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Tensor& t);

// Builds a rows x cols tensor from row-major data, rejecting NaN/Inf.
Tensor make_tensor(Index rows, Index cols, std::span<const double> data);

inline void require_finite(const Tensor& t, std::string_view what) {
  if (!t.allFinite()) throw NumericError("non-finite value in " + std::string(what));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
}

namespace kernels {

template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename Derived>
Matrix<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    const Scalar lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = (logits.row(i).array() - lse).matrix();
  }
  return out;
}

// Divides every row by its L2 norm. A zero row is a numeric error.
template <typename Derived>
Matrix<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  Matrix<typename Derived::Scalar> out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const auto n = m.row(i).norm();
    if (!(n > 0)) throw NumericError("normalize_rows: zero-norm row " + std::to_string(i));
    out.row(i) = m.row(i) / n;
  }
  return out;
}

// Row c of the result is scale_c * direction_c / ||direction_c||.
template <typename DerivedV, typename DerivedG>
Matrix<typename DerivedV::Scalar> weight_norm(const Eigen::MatrixBase<DerivedV>& direction,
                                              const Eigen::MatrixBase<DerivedG>& scale) {
  if (scale.size() != direction.rows()) throw ShapeError("weight_norm: scale/direction mismatch");
  Matrix<typename DerivedV::Scalar> w(direction.rows(), direction.cols());
  for (Index c = 0; c < direction.rows(); ++c) {
    const auto n = direction.row(c).norm();
    if (!(n > 0)) throw NumericError("weight_norm: zero direction vector for class " + std::to_string(c));
    w.row(c) = direction.row(c) * (scale(c) / n);
  }
  return w;
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_distance(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
  const auto na = a.norm();
  const auto nb = b.norm();
  if (!(na > 0) || !(nb > 0)) throw NumericError("cosine_distance: zero vector");
  return typename DerivedA::Scalar(1) - a.dot(b) / (na * nb);
}

struct BatchNormResult {
  Tensor output;
  Tensor normalized;  // (x - mean) / sqrt(var + eps), before the affine map
  RowVector<double> mean;
  RowVector<double> variance;  // biased batch variance
  RowVector<double> inv_std;
};

BatchNormResult batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps);

}  // namespace kernels

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

// Ordered record of primitive operations. Nodes are appended in evaluation
// order, so a reverse sweep over the node list is a valid topological order:
// backward() visits each node once and accumulates gradients additively.
class Tape {
 public:
  Var constant(Tensor value, std::string name = "constant");
  Var parameter(Tensor value, std::string name = "parameter");

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Zero tensor of the node's shape when nothing flowed into it.
  const Tensor& grad(Var v);
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var scalar_output);

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // element-wise
  Var scale(Var a, double c);
  Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
  Var mul_row(Var a, Var row);
  Var relu(Var a);
  Var batch_norm(Var x, Var gamma, Var beta, double eps, kernels::BatchNormResult* stats = nullptr);
  Var normalize_rows(Var a);
  Var weight_norm(Var direction, Var scale);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var log(Var a, double floor);  // log(max(a, floor)); zero gradient below floor
  Var mean_rows(Var a);          // 1 x cols
  Var sum(Var a);                // 1 x 1
  Var mean(Var a);               // 1 x 1
  Var row_dot(Var a, Var b);     // rows x 1
  Var hcat(Var a, Var b);
  Var pick(Var a, std::span<const int> cols);  // rows x 1, a(i, cols[i])
  // rows x 1, log sum_{j : mask(i,j)} exp(a(i,j)); each row needs one true entry.
  Var masked_logsumexp(Var a, const Mask& mask);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward;
    std::string op;
    bool needs_grad = false;
    bool has_grad = false;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> parents,
           std::function<void(Tape&, std::size_t)> backward);
  void accumulate(std::size_t id, const Tensor& g);
  Node& node(std::size_t id) { return nodes_[id]; }
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }
inline const Tensor& Var::grad() const { return tape->grad(*this); }

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, double c) { return a.tape->scale(a, c); }
inline Var operator*(double c, Var a) { return a.tape->scale(a, c); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var matmul_nt(Var a, Var b) { return a.tape->matmul_nt(a, b); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var softmax(Var a) { return a.tape->softmax(a); }
inline Var log_softmax(Var a) { return a.tape->log_softmax(a); }
inline Var mean(Var a) { return a.tape->mean(a); }
inline Var sum(Var a) { return a.tape->sum(a); }

struct GradResult {
  double loss = 0.0;
  std::vector<Tensor> grads;  // one per parameter, same shapes
};

// Builds a scalar loss from parameter leaves registered on the tape.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

GradResult forward_backward(std::span<const Tensor* const> params, const LossBuilder& build);

// Loss value only; nothing is differentiated.
double evaluate_loss(std::span<const Tensor* const> params, const LossBuilder& build);

// Central differences (f(x+eps) - f(x-eps)) / 2eps for every scalar parameter.
// Parameters are perturbed in place and restored before returning.
std::vector<Tensor> finite_diff_grad(std::span<Tensor* const> params, const LossBuilder& build, double eps);

}  // namespace adacontrast
