#pragma once

// Synthetic closed-set domain shifts, comparison baselines and the ablation
// ladder.

#include "adacontrast/adapt.hpp"
#include "adacontrast/dataset.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace adacontrast {

struct ShiftTask {
  std::string name;  // canonical spec string, e.g. "two_moons_rotate(30)"
  Dataset source;
  Dataset target;    // labels for evaluation only
  std::string shift; // human-readable shift descriptor
  int num_classes = 0;

  bool operator==(const ShiftTask&) const = default;
};

// Families:
//   two_moons_rotate(deg)             2-D moons; target rotated about the data center
//   gauss_blobs_shift(delta, C, D)    C Gaussian classes in D dims; target translated by delta
//   digits_corrupt(severity)          8x8 seven-segment digits; target blurred, dimmed and noised
// `n` samples per domain; datasets are a pure function of (spec, seed, n).
ShiftTask make_task(std::string_view spec, std::uint64_t seed, Index n = 2000);

// The three-task synthetic suite used by the benchmark and acceptance runs.
std::vector<std::string> suite_tasks();

// Desk-scale adaptation settings for the synthetic suite.
AdaptConfig bench_config(std::uint64_t seed);

struct MethodResult {
  std::string method;
  double accuracy = 0.0;
  double per_class_accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double stream_accuracy = 0.0;  // online runs
  RunResult run;                 // empty for source_only
};

// source_only | epoch_pseudo_label | entropy_min | adacontrast | adacontrast_online
AdaptConfig method_config(std::string_view method, const AdaptConfig& base);
MethodResult run_baseline(std::string_view method, const ShiftTask& task, const Params& source,
                          const AdaptConfig& config);

struct AblationRow {
  std::string row;  // "#1", "#2", "#3-", "#3", "#4"
  Components components;
  std::uint64_t config_hash = 0;  // hash of everything except the components
  double accuracy = 0.0;
  double per_class_accuracy = 0.0;
  double ece = 0.0;
};

std::vector<std::pair<std::string, Components>> ablation_rows();

std::vector<AblationRow> run_ablation_ladder(const ShiftTask& task, const Params& source, const AdaptConfig& config);

std::uint64_t config_hash_without_components(const AdaptConfig& config);

std::string ablation_csv(const std::vector<AblationRow>& rows, std::string_view task);

}  // namespace adacontrast
