#include "doctest.h"

#include <algorithm>
#include <random>

#include "adacontrast/eval.hpp"

using namespace adacontrast;

TEST_CASE("accuracy") {
  const std::vector<int> y{0, 1, 1};
  CHECK(accuracy(y, y, AccuracyMode::overall) == 1.0);
  const std::vector<int> labels{0, 0, 1}, preds{0, 1, 1};
  CHECK(std::abs(accuracy(preds, labels, AccuracyMode::overall) - 2.0 / 3.0) < 1e-15);
  CHECK(accuracy(preds, labels, AccuracyMode::per_class_avg, 2) == 0.75);
  int skipped = -1;
  CHECK(accuracy(preds, labels, AccuracyMode::per_class_avg, 4, &skipped) == 0.75);
  CHECK(skipped == 2);
  CHECK_THROWS(accuracy(preds, std::vector<int>{0}, AccuracyMode::overall));
}

TEST_CASE("accuracy ignores sample order") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> c(0, 4);
  std::vector<int> p(200), y(200);
  for (int i = 0; i < 200; ++i) {
    p[static_cast<std::size_t>(i)] = c(rng);
    y[static_cast<std::size_t>(i)] = c(rng);
  }
  const double a = accuracy(p, y, AccuracyMode::per_class_avg, 5);
  std::vector<int> order(200);
  for (int i = 0; i < 200; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> p2, y2;
  for (int i : order) {
    p2.push_back(p[static_cast<std::size_t>(i)]);
    y2.push_back(y[static_cast<std::size_t>(i)]);
  }
  CHECK(std::abs(accuracy(p2, y2, AccuracyMode::per_class_avg, 5) - a) < 1e-15);
}

TEST_CASE("calibration bins") {
  CHECK(calibration_bin(0.0, 10) == 0);
  CHECK(calibration_bin(0.1, 10) == 0);
  CHECK(calibration_bin(0.3, 10) == 2);  // upper edge belongs to the lower bin
  CHECK(calibration_bin(0.30000000000000004, 10) == 3);
  CHECK(calibration_bin(0.95, 10) == 9);
  CHECK(calibration_bin(1.0, 10) == 9);
}

TEST_CASE("hand-computed ECE and MCE") {
  Tensor probs(4, 2);
  probs << 0.95, 0.05, 0.95, 0.05, 0.95, 0.05, 0.95, 0.05;
  const auto r = calibration(probs, std::vector<int>{0, 0, 0, 1});
  CHECK(std::abs(r.ece - 0.2) < 1e-12);
  CHECK(std::abs(r.mce - 0.2) < 1e-12);
  CHECK(r.bins.size() == 10);
  CHECK(r.bins[9].count == 4);

  Tensor perfect(4, 2);
  perfect << 0.75, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.25;
  const auto z = calibration(perfect, std::vector<int>{0, 0, 1, 1});
  CHECK(z.ece == 0.0);
  CHECK(z.mce == 0.0);
}
