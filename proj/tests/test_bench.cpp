#include "doctest.h"

#include <cmath>
#include <set>

#include "adacontrast/bench.hpp"

using namespace adacontrast;

TEST_CASE("task generation") {
  const auto a = make_task("two_moons_rotate(30)", 3);
  CHECK(a == make_task("two_moons_rotate(30)", 3));
  CHECK_FALSE(a == make_task("two_moons_rotate(30)", 4));
  CHECK(a.source.size() == 2000);
  CHECK(a.target.size() == 2000);
  CHECK(a.source.features != a.target.features);
  for (const auto& spec : suite_tasks()) {
    const auto t = make_task(spec, 0, 300);
    CHECK(t.name == spec);
    const std::set<int> s(t.source.labels.begin(), t.source.labels.end());
    const std::set<int> u(t.target.labels.begin(), t.target.labels.end());
    CHECK(s == u);
    CHECK(static_cast<int>(s.size()) == t.num_classes);
  }
  CHECK(make_task("gauss_blobs_shift(6,12,16)", 0, 240).num_classes == 12);
  CHECK_THROWS(make_task("spirals(3)", 0));
  CHECK_THROWS(make_task("two_moons_rotate", 0));
  CHECK_THROWS(make_task("two_moons_rotate(1,2)", 0));
  CHECK_THROWS(make_task("gauss_blobs_shift(6,x,16)", 0));
}

TEST_CASE("null rotation is not a shift") {
  const auto t = make_task("two_moons_rotate(0)", 1);
  const AdaptConfig cfg = bench_config(1);
  const auto src = train_source(cfg, t.source, t.num_classes);
  const auto only = run_baseline("source_only", t, src.params, cfg);
  CHECK(std::abs(only.accuracy - src.val_accuracy) <= 0.02);
  AdaptConfig quick = cfg;
  quick.epochs = 3;
  const auto adapted = run_baseline("adacontrast", t, src.params, quick);
  CHECK(std::abs(adapted.accuracy - only.accuracy) <= 0.02);
}

TEST_CASE("rotated moons open a gap the method closes") {
  const auto t = make_task("two_moons_rotate(30)", 0);
  const AdaptConfig cfg = bench_config(0);
  const auto src = train_source(cfg, t.source, t.num_classes);
  const double on_source = evaluate(src.params, t.source).accuracy;
  const auto only = run_baseline("source_only", t, src.params, cfg);
  CHECK(only.accuracy < on_source);
  const auto adapted = run_baseline("adacontrast", t, src.params, cfg);
  CHECK(adapted.accuracy >= only.accuracy + 0.10);
}

TEST_CASE("pseudo labels stay well above chance") {
  const auto t = make_task("gauss_blobs_shift(6,8,16)", 0);
  const AdaptConfig cfg = bench_config(0);
  const auto src = train_source(cfg, t.source, t.num_classes);
  const auto adapted = run_baseline("adacontrast", t, src.params, cfg);
  REQUIRE(adapted.run.epoch_pseudo_label_acc.size() == static_cast<std::size_t>(cfg.epochs));
  for (double acc : adapted.run.epoch_pseudo_label_acc) CHECK(acc > 2.0 / t.num_classes);
}

TEST_CASE("ablation rows differ only in their components") {
  const auto rows = ablation_rows();
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].second.pseudo_labels == PseudoLabelSource::epoch_offline);
  Components one = rows[0].second, two = rows[1].second;
  one.pseudo_labels = two.pseudo_labels;
  CHECK(one == two);
  CHECK(rows[2].second.contrastive);
  CHECK_FALSE(rows[2].second.exclusion);
  CHECK(rows[3].second.exclusion);
  CHECK(rows[4].second == Components{});
  AdaptConfig a = bench_config(2), b = bench_config(2);
  b.components = rows[0].second;
  CHECK(config_hash_without_components(a) == config_hash_without_components(b));
  b.lr *= 2;
  CHECK(config_hash_without_components(a) != config_hash_without_components(b));
}

TEST_CASE("method configurations") {
  const AdaptConfig base = bench_config(0);
  CHECK(method_config("adacontrast", base) == base);
  CHECK(method_config("adacontrast_online", base).online);
  CHECK(method_config("entropy_min", base).objective == Objective::entropy_min);
  const auto pl = method_config("epoch_pseudo_label", base);
  CHECK(pl.components.pseudo_labels == PseudoLabelSource::epoch_offline);
  CHECK_FALSE(pl.components.contrastive);
  CHECK_THROWS(method_config("tent", base));
}

TEST_CASE("ablation csv") {
  std::vector<AblationRow> rows(1);
  rows[0].row = "#2";
  rows[0].components = ablation_rows()[1].second;
  rows[0].accuracy = 0.5;
  const std::string csv = ablation_csv(rows, "t");
  CHECK(csv.find("t,#2,online_refine,0,0,0,0,0.5,") != std::string::npos);
}
