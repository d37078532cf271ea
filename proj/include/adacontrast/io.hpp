#pragma once

// Checkpoints (JSON), metrics/calibration CSV, dataset cache (binary) and
// queue dumps.

#include "adacontrast/adapt.hpp"
#include "adacontrast/dataset.hpp"
#include "adacontrast/eval.hpp"
#include "adacontrast/memory.hpp"
#include "adacontrast/model.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

namespace adacontrast {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Params params;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  double val_accuracy = 0.0;
  std::string task;
};

std::string checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Shortest text that parses back to the same double.
std::string format_double(double v);

inline constexpr const char* kMetricsHeader = "step,epoch,l_ce,l_ctr,l_div,total,lr,pseudo_label_acc";

std::string metrics_row(const StepMetrics& m);

// Append-only step log; every row is flushed so an interrupted run leaves a
// valid prefix.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void append(const StepMetrics& m);

 private:
  std::ofstream out_;
};

void write_calibration_csv(const std::filesystem::path& path, const CalibrationReport& report);

inline constexpr std::uint32_t kDatasetCacheVersion = 1;

void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

std::string queue_dump_json(const ProbabilityQueue& qw, const KeyQueue& qs);

}  // namespace adacontrast
