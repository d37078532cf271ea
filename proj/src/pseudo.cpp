#include "adacontrast/pseudo.hpp"

#include <cmath>
#include <stdexcept>

namespace adacontrast {

int argmax(const Eigen::Ref<const RowVector<double>>& v) {
  if (v.size() == 0) throw ShapeError("argmax: empty vector");
  Index best = 0;
  for (Index c = 1; c < v.size(); ++c)
    if (v(c) > v(best)) best = c;
  return static_cast<int>(best);
}

namespace {

void check_probs(const Eigen::Ref<const RowVector<double>>& p) {
  if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9)
    throw NumericError("refine: direct prediction is not a probability vector");
}

PseudoLabelRecord vote(const ProbabilityQueue& queue, std::vector<Index> neighbors) {
  PseudoLabelRecord r;
  r.probs = RowVector<double>::Zero(queue.num_classes());
  for (Index j : neighbors) r.probs += queue.probs().row(j);
  r.probs /= static_cast<double>(neighbors.size());
  r.label = argmax(r.probs);
  r.neighbors = std::move(neighbors);
  r.refined = true;
  return r;
}

PseudoLabelRecord passthrough(const Eigen::Ref<const RowVector<double>>& direct) {
  PseudoLabelRecord r;
  r.probs = direct;
  r.label = argmax(direct);
  return r;
}

}  // namespace

PseudoLabelRecord refine(const ProbabilityQueue& queue, const RowVector<double>& w,
                         const RowVector<double>& direct_probs, Index n, bool enabled) {
  check_probs(direct_probs);
  if (!enabled || queue.size() == 0) return passthrough(direct_probs);
  if (direct_probs.size() != queue.num_classes()) throw ShapeError("refine: class count mismatch");
  return vote(queue, knn_query(queue, w, n));
}

std::vector<PseudoLabelRecord> batch_refine(const ProbabilityQueue& queue, const Tensor& w, const Tensor& direct_probs,
                                            Index n, bool enabled) {
  if (w.rows() != direct_probs.rows()) throw ShapeError("batch_refine: row count mismatch");
  std::vector<PseudoLabelRecord> out;
  out.reserve(static_cast<std::size_t>(w.rows()));
  for (Index i = 0; i < direct_probs.rows(); ++i) check_probs(direct_probs.row(i));
  if (!enabled || queue.size() == 0) {
    for (Index i = 0; i < direct_probs.rows(); ++i) out.push_back(passthrough(direct_probs.row(i)));
    return out;
  }
  if (direct_probs.cols() != queue.num_classes()) throw ShapeError("batch_refine: class count mismatch");
  const Tensor d = cosine_distances(queue, w);
  for (Index i = 0; i < w.rows(); ++i) out.push_back(vote(queue, select_nearest(queue, d.row(i), n)));
  return out;
}

std::vector<int> labels_of(const std::vector<PseudoLabelRecord>& records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

}  // namespace adacontrast
