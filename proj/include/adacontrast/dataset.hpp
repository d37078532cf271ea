#pragma once

#include "adacontrast/diffcore.hpp"

#include <vector>

namespace adacontrast {

struct Dataset {
  Tensor features;          // n x input_dim
  std::vector<int> labels;  // n, ground truth (evaluation only on target data)

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool operator==(const Dataset& o) const {
    return features.rows() == o.features.rows() && features.cols() == o.features.cols() &&
           features == o.features && labels == o.labels;
  }
};

inline Dataset subset(const Dataset& d, const std::vector<Index>& rows) {
  Dataset out;
  out.features.resize(static_cast<Index>(rows.size()), d.dim());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Index>(r)) = d.features.row(rows[r]);
    out.labels.push_back(d.labels[static_cast<std::size_t>(rows[r])]);
  }
  return out;
}

}  // namespace adacontrast
