#include "adacontrast/memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adacontrast {

void ProbabilityQueue::enqueue(const Tensor& features, const Tensor& probs) {
  if (features.rows() != probs.rows()) throw ShapeError("ProbabilityQueue::enqueue: row count mismatch");
  if (features.cols() != feature_dim() || probs.cols() != num_classes())
    throw ShapeError("ProbabilityQueue::enqueue: width mismatch");
  for (Index i = 0; i < features.rows(); ++i) {
    if (!features.row(i).allFinite() || !(features.row(i).norm() > 0))
      throw NumericError("ProbabilityQueue::enqueue: feature row must be finite and nonzero");
    if ((probs.row(i).array() < 0.0).any() || std::abs(probs.row(i).sum() - 1.0) > 1e-9)
      throw NumericError("ProbabilityQueue::enqueue: probability row is not normalized");
  }
  features_.push(features);
  probs_.push(probs);
}

void KeyQueue::enqueue(const Tensor& keys, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != keys.rows()) throw ShapeError("KeyQueue::enqueue: label count mismatch");
  for (Index i = 0; i < keys.rows(); ++i)
    if (std::abs(keys.row(i).norm() - 1.0) > 1e-9) throw NumericError("KeyQueue::enqueue: key is not unit norm");
  keys_.push(keys);
  labels_.push(Eigen::Map<const Matrix<int>>(labels.data(), keys.rows(), 1));
}

KeyQueue random_key_queue(Index capacity, Index feature_dim, int num_classes, std::mt19937_64& rng) {
  KeyQueue q(capacity, feature_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, num_classes - 1);
  Tensor keys(capacity, feature_dim);
  std::vector<int> labels(static_cast<std::size_t>(capacity));
  for (Index i = 0; i < capacity; ++i) {
    for (Index j = 0; j < feature_dim; ++j) keys(i, j) = normal(rng);
    keys.row(i).normalize();
    labels[static_cast<std::size_t>(i)] = label(rng);
  }
  q.enqueue(keys, labels);
  return q;
}

Tensor cosine_distances(const ProbabilityQueue& queue, const Tensor& w) {
  if (w.cols() != queue.feature_dim()) throw ShapeError("cosine_distances: query width mismatch");
  const auto stored = queue.features().stored();
  const Eigen::VectorXd stored_norms = stored.rowwise().norm();
  const Eigen::VectorXd query_norms = w.rowwise().norm();
  if (!(query_norms.array() > 0).all()) throw NumericError("knn: zero query vector");
  Tensor dots = w * stored.transpose();
  for (Index i = 0; i < dots.rows(); ++i)
    for (Index j = 0; j < dots.cols(); ++j) dots(i, j) = 1.0 - dots(i, j) / (query_norms(i) * stored_norms(j));
  return dots;
}

std::vector<Index> select_nearest(const ProbabilityQueue& queue, const Eigen::Ref<const RowVector<double>>& distances,
                                  Index n) {
  if (n < 1) throw std::invalid_argument("knn: neighbor count must be >= 1");
  const Index size = queue.size();
  if (size < 1) throw std::invalid_argument("knn: empty queue");
  std::vector<Index> order(static_cast<std::size_t>(size));
  std::iota(order.begin(), order.end(), Index{0});
  const auto& feats = queue.features();
  auto less = [&](Index a, Index b) {
    const double da = distances(feats.physical(a));
    const double db = distances(feats.physical(b));
    return da < db || (da == db && a < b);
  };
  const auto k = static_cast<std::ptrdiff_t>(std::min(n, size));
  std::partial_sort(order.begin(), order.begin() + k, order.end(), less);
  order.resize(static_cast<std::size_t>(k));
  return order;
}

std::vector<Index> knn_query(const ProbabilityQueue& queue, const RowVector<double>& w, Index n) {
  const Tensor d = cosine_distances(queue, Tensor(w));
  return select_nearest(queue, d.row(0), n);
}

}  // namespace adacontrast
