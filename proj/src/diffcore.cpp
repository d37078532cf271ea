#include "adacontrast/diffcore.hpp"

#include <algorithm>
#include <limits>

namespace adacontrast {

std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

Tensor make_tensor(Index rows, Index cols, std::span<const double> data) {
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
    throw ShapeError("make_tensor: data length " + std::to_string(data.size()) + " does not match shape [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  Tensor t = Eigen::Map<const Tensor>(data.data(), rows, cols);
  require_finite(t, "make_tensor");
  return t;
}

namespace kernels {

BatchNormResult batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) throw ShapeError("batch_norm: affine width mismatch");
  if (x.rows() < 1) throw ShapeError("batch_norm: empty batch");
  BatchNormResult r;
  r.mean = x.colwise().mean();
  const Tensor centered = x.rowwise() - r.mean;
  r.variance = centered.array().square().colwise().mean().matrix();
  r.inv_std = (r.variance.array() + eps).rsqrt().matrix();
  r.normalized = centered.array().rowwise() * r.inv_std.array();
  r.output = (r.normalized.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  return r;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                       const Tensor& running_var, double eps) {
  if (gamma.size() != x.cols() || running_mean.size() != x.cols()) throw ShapeError("batch_norm: width mismatch");
  const RowVector<double> inv_std = (running_var.row(0).array() + eps).rsqrt().matrix();
  const Tensor normalized = (x.rowwise() - running_mean.row(0)).array().rowwise() * inv_std.array();
  return (normalized.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
}

}  // namespace kernels

Var Tape::push(std::string op, Tensor value, std::vector<std::size_t> parents,
               std::function<void(Tape&, std::size_t)> backward) {
  if (!value.allFinite())
    throw NumericError("non-finite value at node " + std::to_string(nodes_.size()) + " (" + op + ")");
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.op = std::move(op);
  for (auto p : n.parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value, std::string name) { return push(std::move(name), std::move(value), {}, nullptr); }

Var Tape::parameter(Tensor value, std::string name) {
  Var v = push(std::move(name), std::move(value), {}, nullptr);
  nodes_.back().needs_grad = true;
  return v;
}

const Tensor& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols())
    throw ShapeError("gradient shape mismatch at node " + std::to_string(id) + " (" + n.op + ")");
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

void Tape::backward(Var out) {
  if (out.tape != this) throw ShapeError("backward: variable belongs to another tape");
  const Tensor& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward: output must be scalar, got " + shape_string(v));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(out.id, Tensor::Ones(1, 1));
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) {
      n.backward(*this, i);
      if (!nodes_[i].grad.allFinite())
        throw NumericError("non-finite gradient at node " + std::to_string(i) + " (" + nodes_[i].op + ")");
    }
  }
}

namespace {

void check_tape(const Tape* t, Var a) {
  if (a.tape != t) throw ShapeError("operand belongs to another tape");
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
  check_tape(this, a);
  check_tape(this, b);
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.rows()) throw ShapeError("matmul: " + shape_string(A) + " * " + shape_string(B));
  Tensor out = A * B;
  const auto ia = a.id, ib = b.id;
  return push("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    if (t.nodes_[ia].needs_grad) t.accumulate(ia, G * t.nodes_[ib].value.transpose());
    if (t.nodes_[ib].needs_grad) t.accumulate(ib, t.nodes_[ia].value.transpose() * G);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  check_tape(this, a);
  check_tape(this, b);
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt: " + shape_string(A) + " * " + shape_string(B) + "^T");
  Tensor out = A * B.transpose();
  const auto ia = a.id, ib = b.id;
  return push("matmul_nt", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    if (t.nodes_[ia].needs_grad) t.accumulate(ia, G * t.nodes_[ib].value);
    if (t.nodes_[ib].needs_grad) t.accumulate(ib, G.transpose() * t.nodes_[ia].value);
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a) + value(b);
  const auto ia = a.id, ib = b.id;
  return push("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor G = t.upstream(self);
    t.accumulate(ia, G);
    t.accumulate(ib, G);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a) - value(b);
  const auto ia = a.id, ib = b.id;
  return push("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor G = t.upstream(self);
    t.accumulate(ia, G);
    t.accumulate(ib, -G);
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a).cwiseProduct(value(b));
  const auto ia = a.id, ib = b.id;
  return push("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    if (t.nodes_[ia].needs_grad) t.accumulate(ia, G.cwiseProduct(t.nodes_[ib].value));
    if (t.nodes_[ib].needs_grad) t.accumulate(ib, G.cwiseProduct(t.nodes_[ia].value));
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = value(a) * c;
  const auto ia = a.id;
  return push("scale", std::move(out), {ia},
              [ia, c](Tape& t, std::size_t self) { t.accumulate(ia, t.upstream(self) * c); });
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeError("add_row: " + shape_string(A) + " + " + shape_string(R));
  Tensor out = A.rowwise() + R.row(0);
  const auto ia = a.id, ir = row.id;
  return push("add_row", std::move(out), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Tensor G = t.upstream(self);
    t.accumulate(ia, G);
    if (t.nodes_[ir].needs_grad) t.accumulate(ir, G.colwise().sum());
  });
}

Var Tape::mul_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeError("mul_row: " + shape_string(A) + " * " + shape_string(R));
  Tensor out = A.array().rowwise() * R.row(0).array();
  const auto ia = a.id, ir = row.id;
  return push("mul_row", std::move(out), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    if (t.nodes_[ia].needs_grad)
      t.accumulate(ia, G.array().rowwise() * t.nodes_[ir].value.row(0).array());
    if (t.nodes_[ir].needs_grad) t.accumulate(ir, G.cwiseProduct(t.nodes_[ia].value).colwise().sum());
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a).cwiseMax(0.0);
  const auto ia = a.id;
  return push("relu", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& X = t.nodes_[ia].value;
    t.accumulate(ia, (X.array() > 0.0).select(t.upstream(self), 0.0));
  });
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, double eps, kernels::BatchNormResult* stats) {
  auto r = kernels::batch_norm_train(value(x), value(gamma), value(beta), eps);
  Tensor out = r.output;
  const auto ix = x.id, ig = gamma.id, ib = beta.id;
  Tensor xhat = r.normalized;
  RowVector<double> inv_std = r.inv_std;
  if (stats) *stats = std::move(r);
  return push("batch_norm", std::move(out), {ix, ig, ib},
              [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                const Tensor& G = t.upstream(self);
                const double n = static_cast<double>(G.rows());
                if (t.nodes_[ig].needs_grad) t.accumulate(ig, G.cwiseProduct(xhat).colwise().sum());
                if (t.nodes_[ib].needs_grad) t.accumulate(ib, G.colwise().sum());
                if (t.nodes_[ix].needs_grad) {
                  const Tensor dxhat = G.array().rowwise() * t.nodes_[ig].value.row(0).array();
                  const RowVector<double> s1 = dxhat.colwise().sum();
                  const RowVector<double> s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                  Tensor dx = (n * dxhat).rowwise() - s1;
                  dx -= (xhat.array().rowwise() * s2.array()).matrix();
                  dx = dx.array().rowwise() * (inv_std.array() / n);
                  t.accumulate(ix, dx);
                }
              });
}

Var Tape::normalize_rows(Var a) {
  const Tensor& A = value(a);
  Tensor out = kernels::normalize_rows(A);
  RowVector<double> norms = A.rowwise().norm().transpose();
  const auto ia = a.id;
  return push("normalize_rows", std::move(out), {ia}, [ia, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    const Tensor& Y = t.nodes_[self].value;
    Tensor dx(G.rows(), G.cols());
    for (Index i = 0; i < G.rows(); ++i) dx.row(i) = (G.row(i) - Y.row(i) * G.row(i).dot(Y.row(i))) / norms(i);
    t.accumulate(ia, dx);
  });
}

Var Tape::weight_norm(Var direction, Var scale) {
  const Tensor& V = value(direction);
  const Tensor& g = value(scale);
  if (g.rows() != 1 || g.cols() != V.rows()) throw ShapeError("weight_norm: scale must be 1 x rows(direction)");
  Tensor out = kernels::weight_norm(V, g);
  const auto iv = direction.id, ig = scale.id;
  return push("weight_norm", std::move(out), {iv, ig}, [iv, ig](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    const Tensor& V = t.nodes_[iv].value;
    const Tensor& g = t.nodes_[ig].value;
    Tensor dv(V.rows(), V.cols());
    Tensor dg(1, V.rows());
    for (Index c = 0; c < V.rows(); ++c) {
      const double n = V.row(c).norm();
      const RowVector<double> u = V.row(c) / n;
      dg(0, c) = G.row(c).dot(u);
      const RowVector<double> du = G.row(c) * g(0, c);
      dv.row(c) = (du - u * du.dot(u)) / n;
    }
    if (t.nodes_[iv].needs_grad) t.accumulate(iv, dv);
    if (t.nodes_[ig].needs_grad) t.accumulate(ig, dg);
  });
}

Var Tape::softmax(Var a) {
  Tensor out = kernels::softmax_rows(value(a));
  const auto ia = a.id;
  return push("softmax", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    const Tensor& Y = t.nodes_[self].value;
    const Eigen::VectorXd inner = G.cwiseProduct(Y).rowwise().sum();
    t.accumulate(ia, Y.cwiseProduct(G.colwise() - inner));
  });
}

Var Tape::log_softmax(Var a) {
  Tensor out = kernels::log_softmax_rows(value(a));
  const auto ia = a.id;
  return push("log_softmax", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    const Tensor P = t.nodes_[self].value.array().exp();
    const Eigen::VectorXd total = G.rowwise().sum();
    t.accumulate(ia, G - Tensor(P.array().colwise() * total.array()));
  });
}

Var Tape::log(Var a, double floor) {
  const Tensor& A = value(a);
  Tensor out = A.cwiseMax(floor).array().log();
  const auto ia = a.id;
  return push("log", std::move(out), {ia}, [ia, floor](Tape& t, std::size_t self) {
    const Tensor& X = t.nodes_[ia].value;
    const Tensor& G = t.upstream(self);
    t.accumulate(ia, (X.array() > floor).select(G.array() / X.array(), 0.0));
  });
}

Var Tape::mean_rows(Var a) {
  const Tensor& A = value(a);
  if (A.rows() < 1) throw ShapeError("mean_rows: empty input");
  Tensor out = A.colwise().mean();
  const auto ia = a.id;
  const Index n = A.rows();
  return push("mean_rows", std::move(out), {ia}, [ia, n](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    t.accumulate(ia, G.replicate(n, 1) / static_cast<double>(n));
  });
}

Var Tape::sum(Var a) {
  Tensor out(1, 1);
  out(0, 0) = value(a).sum();
  const auto ia = a.id;
  return push("sum", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& X = t.nodes_[ia].value;
    t.accumulate(ia, Tensor::Constant(X.rows(), X.cols(), t.upstream(self)(0, 0)));
  });
}

Var Tape::mean(Var a) {
  const Tensor& A = value(a);
  if (A.size() == 0) throw ShapeError("mean: empty input");
  Tensor out(1, 1);
  out(0, 0) = A.mean();
  const auto ia = a.id;
  return push("mean", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const Tensor& X = t.nodes_[ia].value;
    t.accumulate(ia, Tensor::Constant(X.rows(), X.cols(), t.upstream(self)(0, 0) / static_cast<double>(X.size())));
  });
}

Var Tape::row_dot(Var a, Var b) {
  require_same_shape(value(a), value(b), "row_dot");
  Tensor out = value(a).cwiseProduct(value(b)).rowwise().sum();
  const auto ia = a.id, ib = b.id;
  return push("row_dot", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    if (t.nodes_[ia].needs_grad) t.accumulate(ia, t.nodes_[ib].value.array().colwise() * G.col(0).array());
    if (t.nodes_[ib].needs_grad) t.accumulate(ib, t.nodes_[ia].value.array().colwise() * G.col(0).array());
  });
}

Var Tape::hcat(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rows() != B.rows()) throw ShapeError("hcat: " + shape_string(A) + " | " + shape_string(B));
  Tensor out(A.rows(), A.cols() + B.cols());
  out << A, B;
  const auto ia = a.id, ib = b.id;
  const Index split = A.cols();
  return push("hcat", std::move(out), {ia, ib}, [ia, ib, split](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    if (t.nodes_[ia].needs_grad) t.accumulate(ia, G.leftCols(split));
    if (t.nodes_[ib].needs_grad) t.accumulate(ib, G.rightCols(G.cols() - split));
  });
}

Var Tape::pick(Var a, std::span<const int> cols) {
  const Tensor& A = value(a);
  if (static_cast<Index>(cols.size()) != A.rows()) throw ShapeError("pick: one column index per row required");
  Tensor out(A.rows(), 1);
  std::vector<int> idx(cols.begin(), cols.end());
  for (Index i = 0; i < A.rows(); ++i) {
    if (idx[i] < 0 || idx[i] >= A.cols()) throw ShapeError("pick: column index out of range");
    out(i, 0) = A(i, idx[i]);
  }
  const auto ia = a.id;
  return push("pick", std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Tensor& G = t.upstream(self);
    const Tensor& X = t.nodes_[ia].value;
    Tensor dx = Tensor::Zero(X.rows(), X.cols());
    for (Index i = 0; i < X.rows(); ++i) dx(i, idx[i]) = G(i, 0);
    t.accumulate(ia, dx);
  });
}

Var Tape::masked_logsumexp(Var a, const Mask& mask) {
  const Tensor& A = value(a);
  if (mask.rows() != A.rows() || mask.cols() != A.cols()) throw ShapeError("masked_logsumexp: mask shape");
  Tensor out(A.rows(), 1);
  Tensor weights = Tensor::Zero(A.rows(), A.cols());
  for (Index i = 0; i < A.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < A.cols(); ++j)
      if (mask(i, j)) mx = std::max(mx, A(i, j));
    if (!std::isfinite(mx)) throw ShapeError("masked_logsumexp: row " + std::to_string(i) + " has no active entry");
    double s = 0.0;
    for (Index j = 0; j < A.cols(); ++j)
      if (mask(i, j)) s += (weights(i, j) = std::exp(A(i, j) - mx));
    weights.row(i) /= s;
    out(i, 0) = mx + std::log(s);
  }
  const auto ia = a.id;
  return push("masked_logsumexp", std::move(out), {ia}, [ia, weights = std::move(weights)](Tape& t, std::size_t self) {
    t.accumulate(ia, weights.array().colwise() * t.upstream(self).col(0).array());
  });
}

namespace {

std::vector<Var> register_params(Tape& tape, std::span<const Tensor* const> params) {
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    leaves.push_back(tape.parameter(*params[i], "param" + std::to_string(i)));
  return leaves;
}

double scalar_of(const Tensor& t) {
  if (t.rows() != 1 || t.cols() != 1) throw ShapeError("loss must be scalar, got " + shape_string(t));
  return t(0, 0);
}

}  // namespace

GradResult forward_backward(std::span<const Tensor* const> params, const LossBuilder& build) {
  Tape tape;
  const auto leaves = register_params(tape, params);
  Var loss = build(tape, leaves);
  GradResult r;
  r.loss = scalar_of(loss.value());
  tape.backward(loss);
  r.grads.reserve(leaves.size());
  for (auto v : leaves) r.grads.push_back(tape.grad(v));
  return r;
}

double evaluate_loss(std::span<const Tensor* const> params, const LossBuilder& build) {
  Tape tape;
  const auto leaves = register_params(tape, params);
  return scalar_of(build(tape, leaves).value());
}

std::vector<Tensor> finite_diff_grad(std::span<Tensor* const> params, const LossBuilder& build, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  std::vector<const Tensor*> view(params.begin(), params.end());
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    Tensor g(p->rows(), p->cols());
    for (Index k = 0; k < p->size(); ++k) {
      double& x = p->data()[k];
      const double saved = x;
      x = saved + eps;
      const double fp = evaluate_loss(view, build);
      x = saved - eps;
      const double fm = evaluate_loss(view, build);
      x = saved;
      g.data()[k] = (fp - fm) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace adacontrast
