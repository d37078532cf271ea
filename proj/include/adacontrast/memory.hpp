#pragma once

// Fixed-capacity FIFO row stores. The probability queue holds momentum
// features and predicted probabilities for nearest-neighbor voting; the key
// queue holds unit-norm contrastive keys and their pseudo labels.

#include "adacontrast/diffcore.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace adacontrast {

// Ring buffer of fixed-width rows. Logical index 0 is the oldest entry.
template <typename Scalar>
class RowQueue {
 public:
  RowQueue(Index capacity, Index width) : storage_(capacity, width) {
    if (capacity < 0 || width < 1) throw ShapeError("RowQueue: invalid capacity or width");
  }

  Index capacity() const { return storage_.rows(); }
  Index width() const { return storage_.cols(); }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }
  bool full() const { return size_ == capacity(); }
  std::uint64_t inserted() const { return inserted_; }

  // Appends rows in order; entries past capacity evict the oldest.
  template <typename Derived>
  void push(const Eigen::MatrixBase<Derived>& rows) {
    if (rows.cols() != width()) throw ShapeError("RowQueue::push: row width mismatch");
    inserted_ += static_cast<std::uint64_t>(rows.rows());
    if (capacity() == 0) return;
    Index first = std::max<Index>(0, rows.rows() - capacity());
    for (Index r = first; r < rows.rows(); ++r) {
      storage_.row(head_) = rows.row(r);
      head_ = (head_ + 1) % capacity();
      size_ = std::min(size_ + 1, capacity());
    }
  }

  Index physical(Index logical) const {
    if (logical < 0 || logical >= size_) throw std::out_of_range("RowQueue: logical index out of range");
    return (head_ - size_ + logical + capacity()) % capacity();
  }
  Index logical(Index physical_row) const { return (physical_row - head_ + size_ + capacity()) % capacity(); }

  auto row(Index logical_index) const { return storage_.row(physical(logical_index)); }

  // Rows [0, size()) of the backing store, in physical order.
  auto stored() const { return storage_.topRows(size_); }

  Matrix<Scalar> ordered() const {
    Matrix<Scalar> out(size_, width());
    for (Index i = 0; i < size_; ++i) out.row(i) = row(i);
    return out;
  }

 private:
  Matrix<Scalar> storage_;
  Index head_ = 0;  // next physical slot to write
  Index size_ = 0;
  std::uint64_t inserted_ = 0;
};

// Momentum features w' and probabilities p' for soft voting.
class ProbabilityQueue {
 public:
  ProbabilityQueue(Index capacity, Index feature_dim, Index num_classes)
      : features_(capacity, feature_dim), probs_(capacity, num_classes) {}

  // Rejects rows whose probabilities are negative or do not sum to 1 +- 1e-9,
  // and zero or non-finite features.
  void enqueue(const Tensor& features, const Tensor& probs);

  Index size() const { return features_.size(); }
  Index capacity() const { return features_.capacity(); }
  Index feature_dim() const { return features_.width(); }
  Index num_classes() const { return probs_.width(); }
  const RowQueue<double>& features() const { return features_; }
  const RowQueue<double>& probs() const { return probs_; }

 private:
  RowQueue<double> features_;
  RowQueue<double> probs_;
};

// Unit-norm contrastive keys k with pseudo labels.
class KeyQueue {
 public:
  KeyQueue(Index capacity, Index feature_dim) : keys_(capacity, feature_dim), labels_(capacity, 1) {}

  // Keys must be unit norm within 1e-9.
  void enqueue(const Tensor& keys, std::span<const int> labels);

  Index size() const { return keys_.size(); }
  Index capacity() const { return keys_.capacity(); }
  const RowQueue<double>& keys() const { return keys_; }
  const RowQueue<int>& labels() const { return labels_; }

 private:
  RowQueue<double> keys_;
  RowQueue<int> labels_;
};

// Fills a key queue to capacity with unit-normalized Gaussian keys and
// uniformly random labels.
KeyQueue random_key_queue(Index capacity, Index feature_dim, int num_classes, std::mt19937_64& rng);

// Indices (logical, oldest = 0) of the n entries nearest to w by cosine
// distance, ascending; equal distances prefer the older entry. Returns every
// entry when the queue holds fewer than n.
std::vector<Index> knn_query(const ProbabilityQueue& queue, const RowVector<double>& w, Index n);

// Selection step shared by the single and batched queries: distances are
// indexed physically, results are logical.
std::vector<Index> select_nearest(const ProbabilityQueue& queue, const Eigen::Ref<const RowVector<double>>& distances,
                                  Index n);

// Cosine distances from every row of w to every stored feature (B x size, physical order).
Tensor cosine_distances(const ProbabilityQueue& queue, const Tensor& w);

}  // namespace adacontrast
