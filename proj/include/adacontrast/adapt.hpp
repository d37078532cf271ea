#pragma once

// Source training and test-time adaptation loops.
//
// One adaptation step, in order:
//   1. weak view -> live features w and direct probabilities; pseudo labels
//      by soft voting over the probability queue (or the configured source)
//   2. strong views -> live query q / strong logits, momentum key k; losses
//   3. SGD update of the live model
//   4. EMA update of the momentum model
//   5. probability queue <- momentum features/probabilities of the weak view
//   6. key queue <- normalized k with the pseudo labels

#include "adacontrast/augment.hpp"
#include "adacontrast/dataset.hpp"
#include "adacontrast/eval.hpp"
#include "adacontrast/losses.hpp"
#include "adacontrast/memory.hpp"
#include "adacontrast/model.hpp"
#include "adacontrast/optim.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adacontrast {

enum class PseudoLabelSource { online_refine, epoch_offline, direct };
enum class Objective { adacontrast, entropy_min };

std::string_view to_string(PseudoLabelSource s);
std::string_view to_string(Objective o);

// Which parts of the method are active; the ablation ladder toggles these.
struct Components {
  PseudoLabelSource pseudo_labels = PseudoLabelSource::online_refine;
  bool contrastive = true;
  bool exclusion = true;
  bool weak_strong = true;  // pseudo labels supervise the strong view (else the weak view)
  bool diversity = true;

  bool operator==(const Components&) const = default;
};

struct AdaptConfig {
  NetArch arch;  // input_dim / num_classes are taken from the data

  // Source training.
  int source_epochs = 10;
  double source_lr = 1e-2;
  double label_smoothing = 0.1;

  // Target adaptation.
  int epochs = 15;
  Index batch_size = 128;
  double lr = 2e-4;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double head_lr_mult = 10.0;
  bool full_cosine = false;
  double ema_momentum = 0.999;
  double temperature = 0.07;
  Index queue_size = -1;  // M; -1 selects min(n_t, 16384)
  Index key_queue_size = 4096;  // P
  Index neighbors = 11;         // N
  LossWeights gammas;
  bool online = false;
  Index warmup_samples = -1;  // X; -1 selects the default for the stream length
  std::uint64_t seed = 0;
  AugmentConfig augment;
  Components components;
  Objective objective = Objective::adacontrast;
  std::string divergence_dump;  // path for a checkpoint written when a run diverges

  void validate() const;
  bool operator==(const AdaptConfig&) const = default;
};

Index default_queue_size(Index n_target);
Index default_warmup_samples(Index n_target);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, Index step) : std::runtime_error(what), step_(step) {}
  Index step() const { return step_; }

 private:
  Index step_;
};

struct StepMetrics {
  Index step = 0;
  int epoch = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double pseudo_label_acc = 0.0;
};

struct Evaluation {
  double accuracy = 0.0;
  double per_class_accuracy = 0.0;
  CalibrationReport calibration;
  std::vector<int> predictions;
};

// Eval-mode predictions on the clean data.
Evaluation evaluate(const Params& params, const Dataset& data, int num_bins = 10);

struct SourceResult {
  Params params;
  double val_accuracy = 0.0;
  int best_epoch = -1;  // -1: initialization kept
  std::vector<double> epoch_loss;
  std::vector<Index> train_rows;
  std::vector<Index> val_rows;
};

// Seed of the source train/validation shuffle for a run seed.
std::uint64_t source_split_seed(std::uint64_t seed);

// Seeded 90/10 train/validation split; keeps the parameters with the best
// validation accuracy.
SourceResult train_source(const AdaptConfig& config, const Dataset& source, int num_classes);

// Probability queue of capacity m holding momentum predictions for min(m, n)
// distinct random target samples under weak augmentation.
ProbabilityQueue init_qw(const Tensor& target, const MomentumState& momentum, Index m, std::uint64_t seed,
                         const AugmentConfig& augment);

struct RunState {
  Params live;
  MomentumState momentum;
  ProbabilityQueue qw;
  KeyQueue qs;
  SgdState sgd;
  Index step = 0;
  Index total_steps = 0;
  std::vector<int> epoch_labels;  // offline pseudo labels for the current epoch
};

RunState make_run_state(const AdaptConfig& config, const Params& source, const Tensor& target, bool fill_qw);

using TraceFn = std::function<void(std::string_view)>;
// Called with each step's metrics as soon as the step completes.
using StepFn = std::function<void(const StepMetrics&)>;

struct StepInput {
  std::vector<Index> indices;
  int epoch = 0;
  std::optional<double> lr;  // constant rate; otherwise cosine schedule on progress
  bool refine_enabled = true;
};

struct StepOutput {
  StepMetrics metrics;
  std::vector<int> pseudo_labels;
};

// One mini-batch step. `labels` are ground truth, used only for logging.
StepOutput adapt_step(RunState& state, const AdaptConfig& config, const Dataset& target, const StepInput& input,
                      const TraceFn& trace = {});

struct RunResult {
  Params params;
  std::vector<StepMetrics> steps;
  std::vector<double> epoch_pseudo_label_acc;
  Evaluation final_eval;
  Index dropped_batches = 0;
  // Online mode only.
  double stream_accuracy = 0.0;
  std::vector<Index> consumed;
};

RunResult adapt_offline(const AdaptConfig& config, const Params& source, const Dataset& target,
                        const TraceFn& trace = {}, const StepFn& on_step = {});

// Single pass in a seeded stream order at a constant learning rate; each
// batch is predicted before the model adapts on it.
RunResult adapt_online(const AdaptConfig& config, const Params& source, const Dataset& target,
                       const TraceFn& trace = {}, const StepFn& on_step = {});

// Dispatches on config.online.
RunResult adapt(const AdaptConfig& config, const Params& source, const Dataset& target, const TraceFn& trace = {},
                const StepFn& on_step = {});

// Batches of an epoch: a seeded permutation cut into batch_size chunks; a
// trailing chunk smaller than 2 is dropped.
std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, std::uint64_t seed, int epoch,
                                              Index* dropped = nullptr);

}  // namespace adacontrast
