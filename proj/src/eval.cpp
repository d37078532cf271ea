#include "adacontrast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "adacontrast/pseudo.hpp"

namespace adacontrast {

double accuracy(std::span<const int> preds, std::span<const int> labels, AccuracyMode mode, int num_classes,
                int* num_skipped) {
  if (preds.empty()) throw std::invalid_argument("accuracy: empty input");
  if (preds.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (mode == AccuracyMode::overall) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(preds.size());
  }
  int classes = num_classes;
  for (int y : labels) {
    if (y < 0) throw std::out_of_range("accuracy: negative label");
    classes = std::max(classes, y + 1);
  }
  std::vector<std::size_t> total(static_cast<std::size_t>(classes), 0), hit(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++total[static_cast<std::size_t>(labels[i])];
    hit[static_cast<std::size_t>(labels[i])] += preds[i] == labels[i];
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (total[static_cast<std::size_t>(c)] == 0) continue;
    sum += static_cast<double>(hit[static_cast<std::size_t>(c)]) / static_cast<double>(total[static_cast<std::size_t>(c)]);
    ++present;
  }
  if (num_skipped) *num_skipped = classes - present;
  return sum / present;
}

int calibration_bin(double confidence, int num_bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw std::out_of_range("calibration: confidence outside [0, 1]");
  int b = static_cast<int>(std::ceil(confidence * num_bins)) - 1;
  b = std::clamp(b, 0, num_bins - 1);
  // Repair rounding in confidence * K so the bin edges b/K are exact.
  while (b > 0 && confidence <= static_cast<double>(b) / num_bins) --b;
  while (b < num_bins - 1 && confidence > static_cast<double>(b + 1) / num_bins) ++b;
  return b;
}

CalibrationReport calibration(const Tensor& probs, std::span<const int> labels, int num_bins) {
  if (probs.rows() == 0) throw std::invalid_argument("calibration: empty input");
  if (num_bins < 1) throw std::invalid_argument("calibration: need at least one bin");
  if (static_cast<Index>(labels.size()) != probs.rows()) throw std::invalid_argument("calibration: length mismatch");
  CalibrationReport r;
  r.bins.resize(static_cast<std::size_t>(num_bins));
  std::vector<double> conf_sum(static_cast<std::size_t>(num_bins), 0.0), hits(static_cast<std::size_t>(num_bins), 0.0);
  for (Index i = 0; i < probs.rows(); ++i) {
    const int pred = argmax(probs.row(i));
    const double conf = probs(i, pred);
    const auto b = static_cast<std::size_t>(calibration_bin(conf, num_bins));
    ++r.bins[b].count;
    conf_sum[b] += conf;
    hits[b] += pred == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(probs.rows());
  for (int b = 0; b < num_bins; ++b) {
    auto& bin = r.bins[static_cast<std::size_t>(b)];
    bin.lo = static_cast<double>(b) / num_bins;
    bin.hi = static_cast<double>(b + 1) / num_bins;
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[static_cast<std::size_t>(b)] / cnt;
    bin.accuracy = hits[static_cast<std::size_t>(b)] / cnt;
    const double gap = std::abs(bin.accuracy - bin.mean_confidence);
    r.ece += (cnt / n) * gap;
    r.mce = std::max(r.mce, gap);
  }
  return r;
}

}  // namespace adacontrast
