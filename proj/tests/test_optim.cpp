#include "doctest.h"

#include <cmath>
#include <numbers>

#include "adacontrast/optim.hpp"

using namespace adacontrast;

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0.1, 0.0) == 0.1);
  CHECK(std::abs(cosine_lr(0.1, 1.0) - 0.05) < 1e-15);
  CHECK(std::abs(cosine_lr(0.1, 1.0, true)) < 1e-15);
  CHECK(std::abs(cosine_lr(0.1, 0.5) - 0.1 * 0.5 * (std::cos(std::numbers::pi / 4) + 1)) < 1e-15);
  CHECK_THROWS(cosine_lr(0.1, 1.5));
}

TEST_CASE("schedule is non-increasing") {
  double prev = cosine_lr(1.0, 0.0);
  for (int i = 1; i <= 100; ++i) {
    const double lr = cosine_lr(1.0, i / 100.0);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("plain SGD step by hand") {
  SgdState s;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  s.base_lr = 0.1;
  s.lr_multipliers = {1.0};
  Tensor theta = Tensor::Ones(1, 1);
  Tensor* ps[] = {&theta};
  const std::vector<Tensor> g{Tensor::Constant(1, 1, 2.0)};
  CHECK(sgd_step(s, ps, g, 0.0) == 0.1);
  CHECK(std::abs(theta(0, 0) - 0.8) < 1e-15);
}

TEST_CASE("momentum, weight decay and multipliers") {
  SgdState s;
  s.momentum = 0.9;
  s.weight_decay = 0.01;
  s.lr_multipliers = {1.0, 10.0};
  Tensor a = Tensor::Constant(1, 1, 2.0), b = Tensor::Constant(1, 1, 2.0);
  Tensor* ps[] = {&a, &b};
  const std::vector<Tensor> g{Tensor::Constant(1, 1, 1.0), Tensor::Constant(1, 1, 1.0)};
  sgd_step_with_lr(s, ps, g, 0.01);
  // v1 = 1 + 0.02; theta = 2 - lr * mult * v1
  CHECK(std::abs(a(0, 0) - (2.0 - 0.01 * 1.02)) < 1e-15);
  CHECK(std::abs(b(0, 0) - (2.0 - 0.1 * 1.02)) < 1e-15);
  const double a1 = a(0, 0);
  sgd_step_with_lr(s, ps, g, 0.01);
  CHECK(std::abs(a(0, 0) - (a1 - 0.01 * (0.9 * 1.02 + 1.0 + 0.01 * a1))) < 1e-15);
}

TEST_CASE("non-finite gradients are rejected") {
  SgdState s;
  s.lr_multipliers = {1.0};
  Tensor a = Tensor::Ones(1, 1);
  Tensor* ps[] = {&a};
  CHECK_THROWS_AS(sgd_step_with_lr(s, ps, std::vector<Tensor>{Tensor::Constant(1, 1, INFINITY)}, 0.1), NumericError);
  CHECK_THROWS_AS(sgd_step_with_lr(s, ps, std::vector<Tensor>{Tensor::Ones(1, 2)}, 0.1), ShapeError);
}
