#include "adacontrast/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace adacontrast {

LossBreakdown total_loss(double l_ce, double l_ctr, double l_div, const LossWeights& w) {
  if (w.ce < 0 || w.ctr < 0 || w.div < 0) throw std::invalid_argument("total_loss: weights must be non-negative");
  LossBreakdown b;
  b.l_ce = l_ce;
  b.l_ctr = l_ctr;
  b.l_div = l_div;
  b.weights = w;
  b.total = w.ce * l_ce + w.ctr * l_ctr + w.div * l_div;
  return b;
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("label smoothing alpha must lie in [0, 1)");
}

void check_label(int label, Index classes) {
  if (label < 0 || label >= classes) throw std::out_of_range("class label out of range");
}

Tensor smoothed_targets(std::span<const int> labels, Index classes, double alpha) {
  Tensor t = Tensor::Constant(static_cast<Index>(labels.size()), classes, alpha / static_cast<double>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i], classes);
    t(static_cast<Index>(i), labels[i]) += 1.0 - alpha;
  }
  return t;
}

}  // namespace

double label_smoothed_ce(const RowVector<double>& probs, int label, double alpha) {
  check_alpha(alpha);
  const Index c = probs.size();
  check_label(label, c);
  double loss = 0.0;
  for (Index k = 0; k < c; ++k) {
    const double target = (k == label ? 1.0 - alpha : 0.0) + alpha / static_cast<double>(c);
    loss -= target * std::log(std::max(probs(k), kProbFloor));
  }
  return loss;
}

double weak_strong_ce(const Tensor& probs, std::span<const int> labels) {
  if (probs.rows() == 0) throw std::invalid_argument("weak_strong_ce: empty batch");
  if (static_cast<Index>(labels.size()) != probs.rows()) throw ShapeError("weak_strong_ce: one label per row");
  double total = 0.0;
  for (Index i = 0; i < probs.rows(); ++i) {
    check_label(labels[static_cast<std::size_t>(i)], probs.cols());
    total -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), kProbFloor));
  }
  return total / static_cast<double>(probs.rows());
}

double diversity_loss(const Tensor& probs) {
  if (probs.rows() == 0) throw std::invalid_argument("diversity_loss: empty batch");
  const RowVector<double> mean = probs.colwise().mean();
  double s = 0.0;
  for (Index c = 0; c < mean.size(); ++c) s += mean(c) * std::log(std::max(mean(c), kProbFloor));
  return s;
}

Mask negative_mask(std::span<const int> labels, const KeyQueue& queue, bool exclude_same_class) {
  const Index p = queue.size();
  Mask mask(static_cast<Index>(labels.size()), 1 + p);
  const auto stored = queue.labels().stored();
  for (Index i = 0; i < mask.rows(); ++i) {
    mask(i, 0) = true;
    for (Index j = 0; j < p; ++j)
      mask(i, 1 + j) = !exclude_same_class || stored(j, 0) != labels[static_cast<std::size_t>(i)];
  }
  return mask;
}

double info_nce_excluded(const ContrastiveBatch& batch, const KeyQueue& queue) {
  if (!(batch.temperature > 0)) throw std::invalid_argument("info_nce: temperature must be positive");
  if (batch.queries.rows() == 0) throw std::invalid_argument("info_nce: empty batch");
  require_same_shape(batch.queries, batch.keys, "info_nce");
  if (static_cast<Index>(batch.labels.size()) != batch.queries.rows()) throw ShapeError("info_nce: one label per query");
  const Tensor q = kernels::normalize_rows(batch.queries);
  const Tensor k = kernels::normalize_rows(batch.keys);
  const Mask mask = negative_mask(batch.labels, queue, batch.exclude_same_class);
  const auto stored = queue.keys().stored();
  double total = 0.0;
  for (Index i = 0; i < q.rows(); ++i) {
    const double pos = q.row(i).dot(k.row(i)) / batch.temperature;
    double mx = pos;
    RowVector<double> neg = (q.row(i) * stored.transpose()) / batch.temperature;
    for (Index j = 0; j < neg.size(); ++j)
      if (mask(i, 1 + j)) mx = std::max(mx, neg(j));
    double s = std::exp(pos - mx);
    for (Index j = 0; j < neg.size(); ++j)
      if (mask(i, 1 + j)) s += std::exp(neg(j) - mx);
    total += mx + std::log(s) - pos;
  }
  return total / static_cast<double>(q.rows());
}

namespace tape_losses {

Var smoothed_ce(Var logits, std::span<const int> labels, double alpha) {
  check_alpha(alpha);
  Tape& t = *logits.tape;
  if (static_cast<Index>(labels.size()) != logits.rows()) throw ShapeError("smoothed_ce: one label per row");
  if (logits.rows() == 0) throw std::invalid_argument("smoothed_ce: empty batch");
  Var logp = t.log(t.softmax(logits), kProbFloor);
  Var targets = t.constant(smoothed_targets(labels, logits.cols(), alpha), "ce.targets");
  return t.scale(t.sum(t.mul(targets, logp)), -1.0 / static_cast<double>(logits.rows()));
}

Var diversity(Var logits) {
  Tape& t = *logits.tape;
  Var mean_probs = t.mean_rows(t.softmax(logits));
  return t.sum(t.mul(mean_probs, t.log(mean_probs, kProbFloor)));
}

Var entropy(Var logits) {
  Tape& t = *logits.tape;
  Var p = t.softmax(logits);
  return t.scale(t.sum(t.mul(p, t.log(p, kProbFloor))), -1.0 / static_cast<double>(logits.rows()));
}

Var info_nce(Var queries, const Tensor& keys, std::span<const int> labels, const KeyQueue& queue,
             double temperature, bool exclude_same_class) {
  if (!(temperature > 0)) throw std::invalid_argument("info_nce: temperature must be positive");
  if (queries.rows() == 0) throw std::invalid_argument("info_nce: empty batch");
  require_same_shape(queries.value(), keys, "info_nce");
  Tape& t = *queries.tape;
  Var q = t.normalize_rows(queries);
  Var k = t.constant(kernels::normalize_rows(keys), "ctr.keys");
  Var bank = t.constant(Tensor(queue.keys().stored()), "ctr.queue");
  Var pos = t.row_dot(q, k);
  Var logits = t.scale(t.hcat(pos, t.matmul_nt(q, bank)), 1.0 / temperature);
  Var lse = t.masked_logsumexp(logits, negative_mask(labels, queue, exclude_same_class));
  return t.mean(t.sub(lse, t.scale(pos, 1.0 / temperature)));
}

}  // namespace tape_losses

}  // namespace adacontrast
