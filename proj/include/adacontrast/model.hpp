#pragma once

// Encoder f (ReLU MLP), bottleneck (linear + batch norm) and a
// weight-normalized classifier h, plus the momentum copy used for features
// that should change slowly.

#include "adacontrast/diffcore.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace adacontrast {

struct NetArch {
  Index input_dim = 2;
  std::vector<Index> hidden{64, 64};
  Index bottleneck_dim = 256;
  Index num_classes = 2;

  void validate() const;
  bool operator==(const NetArch&) const = default;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;
};

struct Params {
  NetArch arch;
  std::vector<Linear> encoder;
  Linear bottleneck;
  BatchNormParams bn;
  Tensor direction;  // C x D, classifier direction vectors
  Tensor scale;      // 1 x C, classifier gains

  // Canonical order: encoder (w, b)..., bottleneck w, b, bn gamma, beta, direction, scale.
  std::vector<Tensor*> learnable();
  std::vector<const Tensor*> learnable() const;
  std::vector<std::string> learnable_names() const;
  // Learnable tensors followed by the batch-norm running statistics.
  std::vector<Tensor*> all_tensors();
  std::vector<const Tensor*> all_tensors() const;
  std::vector<std::string> all_names() const;
  // 1 for encoder tensors, head_mult for bottleneck and classifier tensors.
  std::vector<double> lr_multipliers(double head_mult) const;

  bool operator==(const Params& other) const;
};

Params init_params(const NetArch& arch, std::uint64_t seed);

enum class Mode { train, eval };

// Batch features (B x D). In train mode batch norm uses batch statistics and,
// when `update` is given, folds them into its running statistics.
Tensor encode(const Params& params, const Tensor& batch, Mode mode, BatchNormParams* update = nullptr);

// logit_c = g_c * (v_c / ||v_c||) . feature
Tensor weight_norm_logits(const Params& params, const Tensor& features);

struct Prediction {
  Tensor features;
  Tensor logits;
  Tensor probs;
};

Prediction predict(const Params& params, const Tensor& batch, Mode mode, BatchNormParams* update = nullptr);

std::vector<int> argmax_rows(const Tensor& m);

void update_running_stats(BatchNormParams& bn, const kernels::BatchNormResult& batch, Index batch_size);

// Learnable tensors bound to tape variables.
struct ParamVars {
  std::vector<Var> encoder_weight;
  std::vector<Var> encoder_bias;
  Var bottleneck_weight;
  Var bottleneck_bias;
  Var gamma;
  Var beta;
  Var direction;
  Var scale;
};

// Leaves must be in Params::learnable() order.
ParamVars bind_params(const Params& params, std::span<const Var> leaves);

struct TapeForward {
  Var features;
  Var logits;
};

TapeForward forward(const ParamVars& vars, const Params& params, Var input, Mode mode,
                    BatchNormParams* update = nullptr);

struct MomentumState {
  Params params;
  double m = 0.999;
};

std::pair<Params, MomentumState> init_from_source(const Params& source, double m);

// theta' <- m * theta' + (1 - m) * theta, over every tensor including batch-norm statistics.
void ema_update(MomentumState& momentum, const Params& live);

}  // namespace adacontrast
