#pragma once

// Online pseudo labels: average the stored probabilities of the nearest
// queue entries, then take the argmax.

#include "adacontrast/memory.hpp"

#include <vector>

namespace adacontrast {

struct PseudoLabelRecord {
  RowVector<double> probs;  // refined distribution
  int label = 0;            // argmax, lowest index wins ties
  std::vector<Index> neighbors;
  bool refined = false;
};

// Lowest index wins ties.
int argmax(const Eigen::Ref<const RowVector<double>>& v);

// Soft vote over the n nearest entries when enabled and the queue is not
// empty; otherwise the direct prediction is passed through.
PseudoLabelRecord refine(const ProbabilityQueue& queue, const RowVector<double>& w,
                         const RowVector<double>& direct_probs, Index n, bool enabled);

// Row-wise refine; the queue is only read.
std::vector<PseudoLabelRecord> batch_refine(const ProbabilityQueue& queue, const Tensor& w, const Tensor& direct_probs,
                                            Index n, bool enabled);

std::vector<int> labels_of(const std::vector<PseudoLabelRecord>& records);

}  // namespace adacontrast
