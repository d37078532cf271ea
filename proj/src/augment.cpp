#include "adacontrast/augment.hpp"

#include <stdexcept>

namespace adacontrast {

void AugmentConfig::validate() const {
  if (!(weak_jitter_sigma >= 0.0) || !(strong_jitter_sigma >= 0.0))
    throw std::invalid_argument("augment: jitter sigmas must be non-negative");
  if (!(strong_drop_prob >= 0.0 && strong_drop_prob < 1.0))
    throw std::invalid_argument("augment: drop probability must lie in [0, 1)");
  if (!(strong_scale_lo > 0.0 && strong_scale_lo <= strong_scale_hi))
    throw std::invalid_argument("augment: scale range must satisfy 0 < lo <= hi");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t sample, std::uint64_t epoch, Branch branch) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ sample);
  h = splitmix64(h ^ (epoch * 0x100000001b3ULL));
  h = splitmix64(h ^ static_cast<std::uint64_t>(branch));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

RowVector<double> weak_augment(const RowVector<double>& x, const AugmentConfig& cfg, std::mt19937_64& rng) {
  RowVector<double> out = x;
  if (cfg.weak_jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.weak_jitter_sigma);
    for (Index j = 0; j < out.size(); ++j) out(j) += noise(rng);
  }
  return out;
}

RowVector<double> strong_augment(const RowVector<double>& x, const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(cfg.strong_scale_lo, cfg.strong_scale_hi);
  RowVector<double> out = x * (cfg.strong_scale_lo == cfg.strong_scale_hi ? cfg.strong_scale_lo : scale(rng));
  if (cfg.strong_jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.strong_jitter_sigma);
    for (Index j = 0; j < out.size(); ++j) out(j) += noise(rng);
  }
  if (cfg.strong_drop_prob > 0.0) {
    std::bernoulli_distribution drop(cfg.strong_drop_prob);
    for (Index j = 0; j < out.size(); ++j)
      if (drop(rng)) out(j) = 0.0;
  }
  return out;
}

Tensor augment_batch(const Tensor& data, std::span<const Index> indices, const AugmentConfig& cfg, bool strong,
                     std::uint64_t seed, std::uint64_t epoch, Branch branch) {
  Tensor out(static_cast<Index>(indices.size()), data.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Index i = indices[r];
    if (i < 0 || i >= data.rows()) throw ShapeError("augment_batch: sample index out of range");
    auto rng = sample_stream(seed, static_cast<std::uint64_t>(i), epoch, branch);
    const RowVector<double> x = data.row(i);
    out.row(static_cast<Index>(r)) = strong ? strong_augment(x, cfg, rng) : weak_augment(x, cfg, rng);
  }
  return out;
}

}  // namespace adacontrast
