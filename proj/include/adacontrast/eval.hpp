#pragma once

#include "adacontrast/diffcore.hpp"

#include <span>
#include <vector>

namespace adacontrast {

enum class AccuracyMode { overall, per_class_avg };

// per_class_avg averages over classes that occur in `labels`; classes absent
// from the labels are skipped (num_skipped reports how many were).
double accuracy(std::span<const int> preds, std::span<const int> labels, AccuracyMode mode, int num_classes = 0,
                int* num_skipped = nullptr);

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  Index count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  double mce = 0.0;
};

// Bin b covers (b/K, (b+1)/K]; confidences <= 1/K go to bin 0.
int calibration_bin(double confidence, int num_bins);

// Confidence is the max class probability. ECE = sum_b n_b/n |acc_b - conf_b|,
// MCE = max over non-empty bins.
CalibrationReport calibration(const Tensor& probs, std::span<const int> labels, int num_bins = 10);

}  // namespace adacontrast
