#include "adacontrast/optim.hpp"

#include <numbers>
#include <stdexcept>

namespace adacontrast {

double cosine_lr(double base_lr, double progress, bool full_cosine) {
  if (!(progress >= 0.0 && progress <= 1.0)) throw std::invalid_argument("cosine_lr: progress must lie in [0, 1]");
  const double angle = full_cosine ? progress * std::numbers::pi : progress * std::numbers::pi / 2.0;
  return base_lr * 0.5 * (std::cos(angle) + 1.0);
}

void SgdState::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd: weight decay must be non-negative");
  if (!(base_lr > 0.0)) throw std::invalid_argument("sgd: base learning rate must be positive");
}

void sgd_step_with_lr(SgdState& state, std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  state.validate();
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  if (!state.lr_multipliers.empty() && state.lr_multipliers.size() != params.size())
    throw ShapeError("sgd_step: one learning-rate multiplier per parameter required");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor* p : params) state.velocity.push_back(Tensor::Zero(p->rows(), p->cols()));
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "sgd_step");
    require_finite(grads[i], "sgd_step gradient");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double mult = state.lr_multipliers.empty() ? 1.0 : state.lr_multipliers[i];
    Tensor& v = state.velocity[i];
    v = state.momentum * v + grads[i] + state.weight_decay * *params[i];
    *params[i] -= (lr * mult) * v;
  }
}

double sgd_step(SgdState& state, std::span<Tensor* const> params, std::span<const Tensor> grads, double progress) {
  const double lr = cosine_lr(state.base_lr, progress, state.full_cosine);
  sgd_step_with_lr(state, params, grads, lr);
  return lr;
}

}  // namespace adacontrast
