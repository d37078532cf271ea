#include "doctest.h"

#include <algorithm>
#include <deque>
#include <random>

#include "adacontrast/memory.hpp"

using namespace adacontrast;

namespace {

Tensor randn(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Tensor t(r, c);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

Matrix<int> column(std::initializer_list<int> v) {
  Matrix<int> m(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (int x : v) m(i++, 0) = x;
  return m;
}

std::vector<int> contents(const RowQueue<int>& q) {
  std::vector<int> out;
  for (Index i = 0; i < q.size(); ++i) out.push_back(q.row(i)(0));
  return out;
}

Tensor uniform_probs(Index rows, Index c) { return Tensor::Constant(rows, c, 1.0 / static_cast<double>(c)); }

}  // namespace

TEST_CASE("FIFO eviction") {
  RowQueue<int> q(3, 1);
  for (int v : {1, 2, 3, 4}) q.push(column({v}));
  CHECK(contents(q) == std::vector<int>{2, 3, 4});
  CHECK(q.full());
  RowQueue<int> big(3, 1);
  big.push(column({1, 2, 3, 4, 5}));
  CHECK(contents(big) == std::vector<int>{3, 4, 5});
  CHECK(big.inserted() == 5);
}

TEST_CASE("ring buffer matches a deque reference") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index cap = std::uniform_int_distribution<Index>(0, 9)(rng);
    RowQueue<int> q(cap, 1);
    std::deque<int> ref;
    int next = 0;
    for (int op = 0; op < 6; ++op) {
      const int n = std::uniform_int_distribution<int>(0, 12)(rng);
      Matrix<int> rows(n, 1);
      for (int r = 0; r < n; ++r) rows(r, 0) = next++;
      q.push(rows);
      for (int r = 0; r < n; ++r) {
        ref.push_back(rows(r, 0));
        if (static_cast<Index>(ref.size()) > cap) ref.pop_front();
      }
      REQUIRE(contents(q) == std::vector<int>(ref.begin(), ref.end()));
      for (Index i = 0; i < q.size(); ++i) CHECK(q.logical(q.physical(i)) == i);
    }
  }
}

TEST_CASE("zero capacity stays empty") {
  ProbabilityQueue q(0, 3, 2);
  std::mt19937_64 rng(1);
  q.enqueue(randn(4, 3, rng), uniform_probs(4, 2));
  CHECK(q.size() == 0);
  CHECK_THROWS(knn_query(q, randn(1, 3, rng), 5));
}

TEST_CASE("enqueue validation") {
  ProbabilityQueue q(4, 2, 2);
  Tensor f(1, 2), p(1, 2);
  f << 1, 0;
  p << 0.7, 0.4;
  CHECK_THROWS(q.enqueue(f, p));
  p << 0.5, 0.5;
  CHECK_THROWS(q.enqueue(Tensor::Zero(1, 2), p));
  KeyQueue k(4, 2);
  Tensor key(1, 2);
  key << 2, 0;
  CHECK_THROWS(k.enqueue(key, std::vector<int>{0}));
}

TEST_CASE("nearest neighbors") {
  std::mt19937_64 rng(2);
  ProbabilityQueue q(50, 6, 3);
  const Tensor f = randn(50, 6, rng);
  q.enqueue(f, uniform_probs(50, 3));
  const RowVector<double> w = f.row(17);
  CHECK(knn_query(q, w, 3).front() == 17);

  RowVector<double> a = RowVector<double>::Zero(6), b = RowVector<double>::Zero(6);
  a(0) = 1;
  b(1) = 2;
  CHECK(kernels::cosine_distance(a, b) == 1.0);

  // Exact ties go to the older entry.
  ProbabilityQueue t(4, 2, 2);
  Tensor same(3, 2);
  same << 1, 1, 1, 1, 1, 1;
  t.enqueue(same, uniform_probs(3, 2));
  RowVector<double> d(2);
  d << 1, 1;
  CHECK(knn_query(t, d, 2) == std::vector<Index>{0, 1});
  CHECK(knn_query(t, d, 10).size() == 3);
}

TEST_CASE("kNN over a full random queue matches a linear scan") {
  std::mt19937_64 rng(3);
  ProbabilityQueue q(1000, 32, 4);
  const Tensor f = randn(1300, 32, rng);
  q.enqueue(f, uniform_probs(1300, 4));
  const RowVector<double> w = randn(1, 32, rng);
  std::vector<std::pair<double, Index>> scored;
  for (Index j = 0; j < 1000; ++j) {
    const auto row = f.row(300 + j);
    scored.emplace_back(1.0 - w.dot(row) / (w.norm() * row.norm()), j);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<Index> expect;
  for (int k = 0; k < 11; ++k) expect.push_back(scored[static_cast<std::size_t>(k)].second);
  CHECK(knn_query(q, w, 11) == expect);
}

TEST_CASE("random key queue") {
  std::mt19937_64 rng(4);
  const KeyQueue k = random_key_queue(20, 5, 3, rng);
  CHECK(k.size() == 20);
  for (Index i = 0; i < 20; ++i) {
    CHECK(std::abs(k.keys().row(i).norm() - 1.0) < 1e-12);
    CHECK(k.labels().row(i)(0) >= 0);
    CHECK(k.labels().row(i)(0) < 3);
  }
}
