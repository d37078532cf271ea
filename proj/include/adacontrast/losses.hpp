#pragma once

// Objective terms. Each has a plain evaluation over Eigen values and a tape
// builder for differentiation; both evaluate the same expression.

#include "adacontrast/diffcore.hpp"
#include "adacontrast/memory.hpp"

#include <span>
#include <vector>

namespace adacontrast {

inline constexpr double kProbFloor = 1e-12;

struct LossWeights {
  double ce = 1.0;
  double ctr = 1.0;
  double div = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double l_ce = 0.0;
  double l_ctr = 0.0;
  double l_div = 0.0;
  double total = 0.0;
  LossWeights weights;
};

LossBreakdown total_loss(double l_ce, double l_ctr, double l_div, const LossWeights& weights = {});

// -sum_c ((1 - alpha) y_c + alpha / C) log max(p_c, 1e-12)
double label_smoothed_ce(const RowVector<double>& probs, int label, double alpha);

// Batch mean of -log p_q[label].
double weak_strong_ce(const Tensor& probs, std::span<const int> labels);

// sum_c pbar_c log pbar_c with pbar the batch-mean prediction; 0 log 0 = 0.
double diversity_loss(const Tensor& probs);

struct ContrastiveBatch {
  Tensor queries;           // B x D, live encoder on one strong view
  Tensor keys;              // B x D, momentum encoder on the other strong view
  std::vector<int> labels;  // pseudo labels of the batch
  double temperature = 0.07;
  bool exclude_same_class = true;
};

// q and k are L2-normalized; per query the denominator covers the positive
// key and every queued key whose label differs from the query's (all queued
// keys when exclusion is off). Mean over the batch.
double info_nce_excluded(const ContrastiveBatch& batch, const KeyQueue& queue);

// mask(i, 0) is the positive; mask(i, 1 + j) selects physical queue row j.
Mask negative_mask(std::span<const int> labels, const KeyQueue& queue, bool exclude_same_class);

namespace tape_losses {

// Batch mean of label-smoothed cross-entropy from logits. alpha = 0 gives the
// hard-label loss used for pseudo labels.
Var smoothed_ce(Var logits, std::span<const int> labels, double alpha);

Var diversity(Var logits);

// Mean prediction entropy, the objective of the entropy-minimization baseline.
Var entropy(Var logits);

// Keys and queue are constants: no gradient reaches the momentum branch.
Var info_nce(Var queries, const Tensor& keys, std::span<const int> labels, const KeyQueue& queue,
             double temperature, bool exclude_same_class);

}  // namespace tape_losses

}  // namespace adacontrast
