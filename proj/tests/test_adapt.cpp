#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "adacontrast/adapt.hpp"
#include "adacontrast/bench.hpp"

using namespace adacontrast;

namespace {

struct Fixture {
  ShiftTask task;
  AdaptConfig cfg;
  Params source;
};

// Small moons task shared by the loop tests.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.task = make_task("two_moons_rotate(30)", 0, 600);
    x.cfg = bench_config(0);
    x.cfg.epochs = 2;
    x.cfg.batch_size = 64;
    x.source = train_source(x.cfg, x.task.source, 2).params;
    return x;
  }();
  return f;
}

Dataset separable_blobs(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset d;
  d.features.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    d.features(i, 0) = (y ? 2.0 : -2.0) + noise(rng);
    d.features(i, 1) = noise(rng);
    d.labels.push_back(y);
  }
  return d;
}

}  // namespace

TEST_CASE("source training") {
  AdaptConfig cfg = bench_config(3);
  const Dataset d = separable_blobs(400, 3);
  cfg.source_epochs = 0;
  const auto none = train_source(cfg, d, 2);
  CHECK(none.params == init_params(NetArch{2, cfg.arch.hidden, cfg.arch.bottleneck_dim, 2}, 3));
  CHECK(none.best_epoch == -1);

  cfg.source_epochs = 10;
  const auto r = train_source(cfg, d, 2);
  CHECK(r.val_accuracy >= 0.99);
  CHECK(r.val_rows.size() == 40);
  CHECK(r.train_rows.size() == 360);
  std::set<Index> all(r.val_rows.begin(), r.val_rows.end());
  all.insert(r.train_rows.begin(), r.train_rows.end());
  CHECK(all.size() == 400);

  cfg.source_epochs = 15;
  const auto traj = train_source(cfg, make_task("gauss_blobs_shift(6,8,16)", 1, 800).source, 8);
  std::vector<double> avg;
  for (std::size_t e = 4; e < traj.epoch_loss.size(); ++e) {
    double s = 0.0;
    for (std::size_t k = e - 4; k <= e; ++k) s += traj.epoch_loss[k];
    avg.push_back(s / 5.0);
  }
  for (std::size_t i = 1; i < avg.size(); ++i) CHECK(avg[i] <= avg[i - 1]);
  CHECK_THROWS(train_source(cfg, Dataset{}, 2));
}

TEST_CASE("probability queue initialization") {
  const auto& f = fixture();
  const auto [live, mom] = init_from_source(f.source, 0.999);
  const Tensor& x = f.task.target.features;
  CHECK(init_qw(x, mom, 0, 1, f.cfg.augment).size() == 0);

  const auto full = init_qw(x, mom, x.rows(), 1, f.cfg.augment);
  CHECK(full.size() == x.rows());
  // Every stored entry is one target sample under its weak view: recover the sample index by matching the
  // recomputed momentum prediction.
  std::vector<Index> all(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) all[static_cast<std::size_t>(i)] = i;
  const Tensor xw = augment_batch(x, all, f.cfg.augment, false, 1, 0, Branch::queue_init);
  const auto ref = predict(mom.params, xw, Mode::eval);
  std::set<Index> seen;
  for (Index j = 0; j < full.size(); ++j) {
    const auto row = full.features().row(j);
    Index match = -1;
    for (Index i = 0; i < x.rows(); ++i)
      if ((ref.features.row(i) - row).cwiseAbs().maxCoeff() < 1e-12) match = i;
    REQUIRE(match >= 0);
    CHECK((ref.probs.row(match) - full.probs().row(j)).cwiseAbs().maxCoeff() < 1e-12);
    seen.insert(match);
  }
  CHECK(static_cast<Index>(seen.size()) == x.rows());
}

TEST_CASE("batches and defaults") {
  Index dropped = 0;
  const auto b = epoch_batches(257, 128, 4, 0, &dropped);
  CHECK(b.size() == 2);
  CHECK(dropped == 1);
  const auto c = epoch_batches(258, 128, 4, 0);
  CHECK(c.size() == 3);
  CHECK(c.back().size() == 2);
  CHECK(epoch_batches(258, 128, 4, 1) != c);
  CHECK(default_queue_size(2000) == 2000);
  CHECK(default_queue_size(100000) == 16384);
  CHECK(default_warmup_samples(2000) == 80);
  CHECK(default_warmup_samples(30000) == 1024);
  CHECK(default_warmup_samples(60000) == 2048);
}

TEST_CASE("zero loss weights only move batch-norm statistics") {
  const auto& f = fixture();
  AdaptConfig cfg = f.cfg;
  cfg.gammas = {0.0, 0.0, 0.0};
  const auto r = adapt_offline(cfg, f.source, f.task.target);
  Params expect = f.source;
  expect.bn.running_mean = r.params.bn.running_mean;
  expect.bn.running_var = r.params.bn.running_var;
  CHECK(r.params == expect);
  CHECK(r.params.bn.running_mean != f.source.bn.running_mean);
  for (const auto& m : r.steps) {
    CHECK(m.loss.l_ce == 0.0);
    CHECK(m.loss.l_ctr == 0.0);
    CHECK(m.loss.l_div == 0.0);
    CHECK(m.loss.total == 0.0);
  }
}

TEST_CASE("schedule progress reaches one on the last step") {
  const auto& f = fixture();
  const auto r = adapt_offline(f.cfg, f.source, f.task.target);
  CHECK(r.steps.size() == 2 * 10);  // ceil(600 / 64) batches per epoch
  CHECK(std::abs(r.steps.back().lr - 0.5 * f.cfg.lr) < 1e-15);
  CHECK(r.steps.front().lr < f.cfg.lr);
  CHECK(r.epoch_pseudo_label_acc.size() == 2);
}

TEST_CASE("offline runs are reproducible") {
  const auto& f = fixture();
  const auto a = adapt_offline(f.cfg, f.source, f.task.target);
  const auto b = adapt_offline(f.cfg, f.source, f.task.target);
  CHECK(a.params == b.params);
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].loss.total == b.steps[i].loss.total);
}

TEST_CASE("step updates queues after the parameters") {
  const auto& f = fixture();
  RunState s = make_run_state(f.cfg, f.source, f.task.target.features, true);
  s.total_steps = 5;
  const Params before = s.momentum.params;
  const Index qs_before = static_cast<Index>(s.qs.keys().inserted());
  std::vector<Index> idx(32);
  for (Index i = 0; i < 32; ++i) idx[static_cast<std::size_t>(i)] = i;
  bool momentum_fixed_until_ema = true;
  adapt_step(s, f.cfg, f.task.target, StepInput{idx, 0, std::nullopt, true}, [&](std::string_view what) {
    if (what == "theta_update") momentum_fixed_until_ema = s.momentum.params == before && !(s.live == f.source);
  });
  CHECK(momentum_fixed_until_ema);
  CHECK(static_cast<Index>(s.qs.keys().inserted()) == qs_before + 32);
}

TEST_CASE("refinement disabled passes direct predictions through") {
  const auto& f = fixture();
  RunState s = make_run_state(f.cfg, f.source, f.task.target.features, true);
  s.total_steps = 1;
  std::vector<Index> idx(40);
  for (Index i = 0; i < 40; ++i) idx[static_cast<std::size_t>(i)] = 100 + i;
  const Tensor xw = augment_batch(f.task.target.features, idx, f.cfg.augment, false, f.cfg.seed, 0, Branch::weak);
  const auto direct = argmax_rows(predict(s.live, xw, Mode::train).probs);
  const auto out = adapt_step(s, f.cfg, f.task.target, StepInput{idx, 0, std::nullopt, false});
  CHECK(out.pseudo_labels == direct);
}

TEST_CASE("online mode") {
  const auto& f = fixture();
  AdaptConfig cfg = f.cfg;
  cfg.online = true;
  const auto r = adapt_online(cfg, f.source, f.task.target);
  std::vector<Index> consumed = r.consumed;
  std::sort(consumed.begin(), consumed.end());
  CHECK(std::adjacent_find(consumed.begin(), consumed.end()) == consumed.end());
  CHECK(static_cast<Index>(consumed.size()) == f.task.target.size());
  for (const auto& m : r.steps) CHECK(m.lr == cfg.lr);
  CHECK(r.stream_accuracy >= evaluate(f.source, f.task.target).accuracy);

  // Warm-up longer than the stream: identical to running on direct predictions.
  cfg.warmup_samples = 10 * f.task.target.size();
  const auto gated = adapt_online(cfg, f.source, f.task.target);
  cfg.components.pseudo_labels = PseudoLabelSource::direct;
  const auto direct = adapt_online(cfg, f.source, f.task.target);
  CHECK(gated.params == direct.params);
}

TEST_CASE("divergence aborts with a state dump") {
  const auto& f = fixture();
  AdaptConfig cfg = f.cfg;
  Params blown = f.source;
  blown.scale.setConstant(1e308);  // logits overflow on the first step
  cfg.divergence_dump = (std::filesystem::temp_directory_path() / "adacontrast_divergence_test.json").string();
  std::filesystem::remove(cfg.divergence_dump);
  try {
    adapt_offline(cfg, blown, f.task.target);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 1);
  }
  CHECK(std::filesystem::exists(cfg.divergence_dump));
  std::filesystem::remove(cfg.divergence_dump);
}

TEST_CASE("invalid configurations are rejected") {
  AdaptConfig c;
  c.batch_size = 1;
  CHECK_THROWS(c.validate());
  c = {};
  c.ema_momentum = 1.5;
  CHECK_THROWS(c.validate());
  c = {};
  c.neighbors = 0;
  CHECK_THROWS(c.validate());
  const auto& f = fixture();
  CHECK_THROWS_AS(adapt_offline(f.cfg, f.source, make_task("digits_corrupt(1)", 0, 50).target), ShapeError);
}
