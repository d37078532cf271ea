#pragma once

// Weak and strong stochastic views of feature vectors. Weak: small Gaussian
// jitter. Strong: random global scaling, larger jitter, then independent
// coordinate dropout.

#include "adacontrast/diffcore.hpp"

#include <cstdint>
#include <random>
#include <span>

namespace adacontrast {

struct AugmentConfig {
  double weak_jitter_sigma = 0.05;
  double strong_jitter_sigma = 0.2;
  double strong_drop_prob = 0.2;
  double strong_scale_lo = 0.7;
  double strong_scale_hi = 1.3;

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

enum class Branch : std::uint32_t { weak = 0, strong_query = 1, strong_key = 2, queue_init = 3, entropy = 4 };

// Independent, reproducible stream per (seed, sample, epoch, branch).
std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t sample, std::uint64_t epoch, Branch branch);

RowVector<double> weak_augment(const RowVector<double>& x, const AugmentConfig& cfg, std::mt19937_64& rng);
RowVector<double> strong_augment(const RowVector<double>& x, const AugmentConfig& cfg, std::mt19937_64& rng);

// Rows `indices` of `data`, each augmented with its own sample stream.
Tensor augment_batch(const Tensor& data, std::span<const Index> indices, const AugmentConfig& cfg, bool strong,
                     std::uint64_t seed, std::uint64_t epoch, Branch branch);

}  // namespace adacontrast
