#include "adacontrast/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "adacontrast/io.hpp"
#include "adacontrast/pseudo.hpp"

namespace adacontrast {

std::string_view to_string(PseudoLabelSource s) {
  switch (s) {
    case PseudoLabelSource::online_refine: return "online_refine";
    case PseudoLabelSource::epoch_offline: return "epoch_offline";
    case PseudoLabelSource::direct: return "direct";
  }
  return "?";
}

std::string_view to_string(Objective o) { return o == Objective::adacontrast ? "adacontrast" : "entropy_min"; }

void AdaptConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (source_epochs < 0 || epochs < 0) fail("epoch counts must be non-negative");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (!(lr > 0) || !(source_lr > 0)) fail("learning rates must be positive");
  if (!(sgd_momentum >= 0 && sgd_momentum < 1)) fail("sgd momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight decay must be non-negative");
  if (!(head_lr_mult > 0)) fail("head_lr_mult must be positive");
  if (!(ema_momentum >= 0 && ema_momentum <= 1)) fail("ema momentum must lie in [0, 1]");
  if (!(temperature > 0)) fail("temperature must be positive");
  if (queue_size < -1 || key_queue_size < 0 || warmup_samples < -1) fail("queue sizes must be non-negative");
  if (neighbors < 1) fail("neighbors must be >= 1");
  if (gammas.ce < 0 || gammas.ctr < 0 || gammas.div < 0) fail("loss weights must be non-negative");
  if (!(label_smoothing >= 0 && label_smoothing < 1)) fail("label smoothing must lie in [0, 1)");
  augment.validate();
}

Index default_queue_size(Index n_target) { return std::min<Index>(n_target, 16384); }

Index default_warmup_samples(Index n_target) {
  if (n_target >= 2048 * 25) return 2048;
  return std::min<Index>(n_target / 25, 1024);
}

std::vector<std::vector<Index>> epoch_batches(Index n, Index batch_size, std::uint64_t seed, int epoch,
                                              Index* dropped) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    if (end - start < 2) {
      if (dropped) ++*dropped;
      continue;
    }
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

namespace {

std::vector<int> batch_labels(const Dataset& d, const std::vector<Index>& idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (Index i : idx) y.push_back(d.labels[static_cast<std::size_t>(i)]);
  return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<Index>& idx) {
  Tensor out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = x.row(idx[r]);
  return out;
}

SgdState make_sgd(const AdaptConfig& c, const Params& p, double base_lr) {
  SgdState s;
  s.momentum = c.sgd_momentum;
  s.weight_decay = c.weight_decay;
  s.base_lr = base_lr;
  s.full_cosine = c.full_cosine;
  s.lr_multipliers = p.lr_multipliers(c.head_lr_mult);
  return s;
}

NetArch resolve_arch(const AdaptConfig& c, Index input_dim, int num_classes) {
  NetArch a = c.arch;
  a.input_dim = input_dim;
  a.num_classes = num_classes;
  return a;
}

void write_dump(const AdaptConfig& c, const Params& p) {
  if (c.divergence_dump.empty()) return;
  Checkpoint ck;
  ck.params = p;
  ck.seed = c.seed;
  save_checkpoint(c.divergence_dump, ck);
}

}  // namespace

Evaluation evaluate(const Params& params, const Dataset& data, int num_bins) {
  const auto pred = predict(params, data.features, Mode::eval);
  Evaluation e;
  e.predictions = argmax_rows(pred.probs);
  e.accuracy = accuracy(e.predictions, data.labels, AccuracyMode::overall);
  e.per_class_accuracy =
      accuracy(e.predictions, data.labels, AccuracyMode::per_class_avg, static_cast<int>(params.arch.num_classes));
  e.calibration = calibration(pred.probs, data.labels, num_bins);
  return e;
}

std::uint64_t source_split_seed(std::uint64_t seed) { return seed ^ 0x5eed5011ULL; }

SourceResult train_source(const AdaptConfig& config, const Dataset& source, int num_classes) {
  config.validate();
  if (source.size() < 2) throw std::invalid_argument("train_source: need at least two labeled samples");
  SourceResult r;
  std::vector<Index> perm(static_cast<std::size_t>(source.size()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 split_rng(source_split_seed(config.seed));
  std::shuffle(perm.begin(), perm.end(), split_rng);
  const auto n_val = std::max<std::size_t>(1, perm.size() / 10);
  r.val_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  r.train_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  if (r.train_rows.empty()) throw std::invalid_argument("train_source: empty training split");
  const Dataset train = subset(source, r.train_rows);
  const Dataset val = subset(source, r.val_rows);

  Params params = init_params(resolve_arch(config, source.dim(), num_classes), config.seed);
  r.params = params;
  r.val_accuracy = evaluate(params, val).accuracy;
  SgdState sgd = make_sgd(config, params, config.source_lr);

  const Index per_epoch = static_cast<Index>(epoch_batches(train.size(), config.batch_size, config.seed, 0).size());
  const Index total = per_epoch * config.source_epochs;
  Index step = 0;
  for (int epoch = 0; epoch < config.source_epochs; ++epoch) {
    double loss_sum = 0.0;
    const auto batches = epoch_batches(train.size(), config.batch_size, config.seed ^ 0xa11ce, epoch);
    for (const auto& idx : batches) {
      ++step;
      const Tensor x = gather_rows(train.features, idx);
      const auto y = batch_labels(train, idx);
      auto leaves = params.learnable();
      std::vector<const Tensor*> view(leaves.begin(), leaves.end());
      const auto g = forward_backward(view, [&](Tape& t, std::span<const Var> vars) {
        const auto pv = bind_params(params, vars);
        auto f = forward(pv, params, t.constant(x), Mode::train, &params.bn);
        return tape_losses::smoothed_ce(f.logits, y, config.label_smoothing);
      });
      loss_sum += g.loss;
      sgd_step(sgd, leaves, g.grads, total > 0 ? static_cast<double>(step) / static_cast<double>(total) : 0.0);
    }
    r.epoch_loss.push_back(batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size()));
    const double acc = evaluate(params, val).accuracy;
    if (r.best_epoch < 0 || acc > r.val_accuracy) {
      r.val_accuracy = acc;
      r.params = params;
      r.best_epoch = epoch;
    }
  }
  return r;
}

ProbabilityQueue init_qw(const Tensor& target, const MomentumState& momentum, Index m, std::uint64_t seed,
                         const AugmentConfig& augment) {
  if (target.rows() == 0) throw std::invalid_argument("init_qw: empty target dataset");
  if (m < 0) throw std::invalid_argument("init_qw: negative capacity");
  ProbabilityQueue q(m, momentum.params.arch.bottleneck_dim, momentum.params.arch.num_classes);
  const Index count = std::min(m, target.rows());
  if (count == 0) return q;
  std::vector<Index> perm(static_cast<std::size_t>(target.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed ^ 0x9a77e1ULL);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(static_cast<std::size_t>(count));
  constexpr Index kChunk = 512;
  for (Index start = 0; start < count; start += kChunk) {
    const Index end = std::min(count, start + kChunk);
    std::span<const Index> idx(perm.data() + start, static_cast<std::size_t>(end - start));
    const Tensor xw = augment_batch(target, idx, augment, false, seed, 0, Branch::queue_init);
    const auto p = predict(momentum.params, xw, Mode::eval);
    q.enqueue(p.features, p.probs);
  }
  return q;
}

RunState make_run_state(const AdaptConfig& config, const Params& source, const Tensor& target, bool fill_qw) {
  auto [live, momentum] = init_from_source(source, config.ema_momentum);
  const Index m = config.queue_size < 0 ? default_queue_size(target.rows()) : config.queue_size;
  std::mt19937_64 rng(config.seed ^ 0x4b3ULL);
  KeyQueue qs = random_key_queue(config.key_queue_size, source.arch.bottleneck_dim,
                                 static_cast<int>(source.arch.num_classes), rng);
  ProbabilityQueue qw = fill_qw ? init_qw(target, momentum, m, config.seed, config.augment)
                                : ProbabilityQueue(m, source.arch.bottleneck_dim, source.arch.num_classes);
  SgdState sgd = make_sgd(config, live, config.lr);
  return RunState{std::move(live), std::move(momentum), std::move(qw), std::move(qs), std::move(sgd), 0, 0, {}};
}

StepOutput adapt_step(RunState& s, const AdaptConfig& c, const Dataset& target, const StepInput& in,
                      const TraceFn& trace) {
  auto mark = [&](std::string_view what) {
    if (trace) trace(what);
  };
  const auto& idx = in.indices;
  const auto truth = batch_labels(target, idx);
  const Tensor xw = augment_batch(target.features, idx, c.augment, false, c.seed, in.epoch, Branch::weak);

  StepOutput out;
  out.metrics.step = s.step + 1;
  out.metrics.epoch = in.epoch;

  auto leaves = s.live.learnable();
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor* p : leaves) vars.push_back(tape.parameter(*p));
  const ParamVars pv = bind_params(s.live, vars);

  auto fw = forward(pv, s.live, tape.constant(xw), Mode::train, &s.live.bn);
  Var total;
  LossBreakdown breakdown;
  bool has_loss = false;
  std::vector<int> yhat;

  if (c.objective == Objective::entropy_min) {
    yhat = argmax_rows(fw.logits.value());
    mark("refine");
    total = tape_losses::entropy(fw.logits);
    breakdown = total_loss(total.value()(0, 0), 0.0, 0.0, LossWeights{1.0, 0.0, 0.0});
    has_loss = true;
    mark("losses");
  } else {
    const Tensor probs_w = kernels::softmax_rows(fw.logits.value());
    switch (c.components.pseudo_labels) {
      case PseudoLabelSource::online_refine:
        yhat = labels_of(batch_refine(s.qw, fw.features.value(), probs_w, c.neighbors, in.refine_enabled));
        break;
      case PseudoLabelSource::direct:
        yhat = argmax_rows(probs_w);
        break;
      case PseudoLabelSource::epoch_offline:
        if (s.epoch_labels.size() != static_cast<std::size_t>(target.size()))
          throw std::logic_error("adapt_step: epoch pseudo labels not computed");
        for (Index i : idx) yhat.push_back(s.epoch_labels[static_cast<std::size_t>(i)]);
        break;
    }
    mark("refine");

    const Tensor xq = augment_batch(target.features, idx, c.augment, true, c.seed, in.epoch, Branch::strong_query);
    const Tensor xk = augment_batch(target.features, idx, c.augment, true, c.seed, in.epoch, Branch::strong_key);
    auto fq = forward(pv, s.live, tape.constant(xq), Mode::train, &s.live.bn);
    const Tensor k = encode(s.momentum.params, xk, Mode::eval);

    const LossWeights w{c.gammas.ce, c.components.contrastive ? c.gammas.ctr : 0.0,
                        c.components.diversity ? c.gammas.div : 0.0};
    std::vector<Var> terms;
    double l_ce = 0.0, l_ctr = 0.0, l_div = 0.0;
    if (w.ce > 0) {
      Var v = tape_losses::smoothed_ce(c.components.weak_strong ? fq.logits : fw.logits, yhat, 0.0);
      l_ce = v.value()(0, 0);
      terms.push_back(tape.scale(v, w.ce));
    }
    if (w.ctr > 0) {
      Var v = tape_losses::info_nce(fq.features, k, yhat, s.qs, c.temperature, c.components.exclusion);
      l_ctr = v.value()(0, 0);
      terms.push_back(tape.scale(v, w.ctr));
    }
    if (w.div > 0) {
      Var v = tape_losses::diversity(fq.logits);
      l_div = v.value()(0, 0);
      terms.push_back(tape.scale(v, w.div));
    }
    breakdown = total_loss(l_ce, l_ctr, l_div, w);
    if (!terms.empty()) {
      total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
      has_loss = true;
    }
    mark("losses");

    out.metrics.loss = breakdown;
    if (!std::isfinite(breakdown.total)) throw NumericError("non-finite total loss");

    // Keys are consumed after the parameter update; keep them for the key queue.
    s.step += 1;
    const double progress =
        s.total_steps > 0 ? std::min(1.0, static_cast<double>(s.step) / static_cast<double>(s.total_steps)) : 0.0;
    out.metrics.lr = in.lr ? *in.lr : cosine_lr(s.sgd.base_lr, progress, s.sgd.full_cosine);
    if (has_loss) {
      tape.backward(total);
      std::vector<Tensor> grads;
      for (Var v : vars) grads.push_back(tape.grad(v));
      sgd_step_with_lr(s.sgd, leaves, grads, out.metrics.lr);
    }
    mark("theta_update");
    ema_update(s.momentum, s.live);
    mark("ema");
    const auto mom = predict(s.momentum.params, xw, Mode::eval);
    s.qw.enqueue(mom.features, mom.probs);
    mark("qw_update");
    s.qs.enqueue(kernels::normalize_rows(k), yhat);
    mark("qs_update");
    out.metrics.pseudo_label_acc = accuracy(yhat, truth, AccuracyMode::overall);
    out.pseudo_labels = std::move(yhat);
    return out;
  }

  // Entropy minimization: plain self-training step, queues untouched.
  out.metrics.loss = breakdown;
  if (!std::isfinite(breakdown.total)) throw NumericError("non-finite total loss");
  s.step += 1;
  const double progress =
      s.total_steps > 0 ? std::min(1.0, static_cast<double>(s.step) / static_cast<double>(s.total_steps)) : 0.0;
  out.metrics.lr = in.lr ? *in.lr : cosine_lr(s.sgd.base_lr, progress, s.sgd.full_cosine);
  tape.backward(total);
  std::vector<Tensor> grads;
  for (Var v : vars) grads.push_back(tape.grad(v));
  sgd_step_with_lr(s.sgd, leaves, grads, out.metrics.lr);
  mark("theta_update");
  ema_update(s.momentum, s.live);
  mark("ema");
  out.metrics.pseudo_label_acc = accuracy(yhat, truth, AccuracyMode::overall);
  out.pseudo_labels = std::move(yhat);
  return out;
}

namespace {

void check_inputs(const AdaptConfig& c, const Params& source, const Dataset& target) {
  c.validate();
  if (target.size() == 0) throw std::invalid_argument("adapt: empty target dataset");
  if (target.dim() != source.arch.input_dim) throw ShapeError("adapt: target width does not match the source model");
  if (static_cast<Index>(target.labels.size()) != target.size()) throw ShapeError("adapt: one label per target row");
}

StepOutput guarded_step(RunState& s, const AdaptConfig& c, const Dataset& target, const StepInput& in,
                        const TraceFn& trace) {
  try {
    return adapt_step(s, c, target, in, trace);
  } catch (const NumericError& e) {
    write_dump(c, s.live);
    throw DivergenceError(std::string("adaptation diverged at step ") + std::to_string(s.step + 1) + ": " + e.what(),
                          s.step + 1);
  }
}

}  // namespace

RunResult adapt_offline(const AdaptConfig& config, const Params& source, const Dataset& target, const TraceFn& trace,
                        const StepFn& on_step) {
  check_inputs(config, source, target);
  const bool uses_qw = config.objective == Objective::adacontrast &&
                       config.components.pseudo_labels == PseudoLabelSource::online_refine;
  RunState s = make_run_state(config, source, target.features, uses_qw);
  RunResult r;
  const Index per_epoch = static_cast<Index>(epoch_batches(target.size(), config.batch_size, config.seed, 0).size());
  s.total_steps = per_epoch * config.epochs;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.objective == Objective::adacontrast &&
        config.components.pseudo_labels == PseudoLabelSource::epoch_offline)
      s.epoch_labels = argmax_rows(predict(s.live, target.features, Mode::eval).logits);
    std::size_t correct = 0, seen = 0;
    for (auto& idx : epoch_batches(target.size(), config.batch_size, config.seed, epoch, &r.dropped_batches)) {
      StepInput in{std::move(idx), epoch, std::nullopt, true};
      auto out = guarded_step(s, config, target, in, trace);
      const auto truth = batch_labels(target, in.indices);
      for (std::size_t i = 0; i < truth.size(); ++i) correct += out.pseudo_labels[i] == truth[i];
      seen += truth.size();
      if (on_step) on_step(out.metrics);
      r.steps.push_back(out.metrics);
    }
    r.epoch_pseudo_label_acc.push_back(seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0);
  }
  r.final_eval = evaluate(s.live, target);
  r.params = std::move(s.live);
  return r;
}

RunResult adapt_online(const AdaptConfig& config, const Params& source, const Dataset& target, const TraceFn& trace,
                       const StepFn& on_step) {
  check_inputs(config, source, target);
  RunState s = make_run_state(config, source, target.features, false);
  const Index warmup = config.warmup_samples < 0 ? default_warmup_samples(target.size()) : config.warmup_samples;
  RunResult r;
  auto batches = epoch_batches(target.size(), config.batch_size, config.seed ^ 0x57eaULL, 0, &r.dropped_batches);
  s.total_steps = static_cast<Index>(batches.size());
  std::size_t correct = 0, seen = 0, pl_correct = 0;
  for (auto& idx : batches) {
    const Tensor clean = gather_rows(target.features, idx);
    const auto before = argmax_rows(predict(s.live, clean, Mode::eval).logits);
    const auto truth = batch_labels(target, idx);
    for (std::size_t i = 0; i < truth.size(); ++i) correct += before[i] == truth[i];
    seen += truth.size();
    r.consumed.insert(r.consumed.end(), idx.begin(), idx.end());
    StepInput in{std::move(idx), 0, config.lr, s.qw.size() >= warmup};
    auto out = guarded_step(s, config, target, in, trace);
    for (std::size_t i = 0; i < truth.size(); ++i) pl_correct += out.pseudo_labels[i] == truth[i];
    if (on_step) on_step(out.metrics);
    r.steps.push_back(out.metrics);
  }
  r.stream_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
  r.epoch_pseudo_label_acc.push_back(seen ? static_cast<double>(pl_correct) / static_cast<double>(seen) : 0.0);
  r.final_eval = evaluate(s.live, target);
  r.params = std::move(s.live);
  return r;
}

RunResult adapt(const AdaptConfig& config, const Params& source, const Dataset& target, const TraceFn& trace,
                const StepFn& on_step) {
  return config.online ? adapt_online(config, source, target, trace, on_step)
                       : adapt_offline(config, source, target, trace, on_step);
}

}  // namespace adacontrast
