#pragma once

#include "adacontrast/diffcore.hpp"

#include <span>
#include <vector>

namespace adacontrast {

// Cosine-annealed learning rate at training progress a in [0, 1].
// Default form: base * 0.5 * (cos(a * pi / 2) + 1), which ends at base / 2.
// full_cosine uses cos(a * pi) and ends at zero.
double cosine_lr(double base_lr, double progress, bool full_cosine = false);

struct SgdState {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double base_lr = 2e-4;
  bool full_cosine = false;
  std::vector<double> lr_multipliers;  // one per parameter tensor
  std::vector<Tensor> velocity;        // lazily sized on the first step

  void validate() const;
};

// v <- mu * v + g + lambda * theta; theta <- theta - lr * mult * v.
// Returns the learning rate used for this step.
double sgd_step(SgdState& state, std::span<Tensor* const> params, std::span<const Tensor> grads, double progress);

// Same update with an explicit learning rate (constant-rate online mode).
void sgd_step_with_lr(SgdState& state, std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

}  // namespace adacontrast
