#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fri/common.hpp"

namespace fri {

// Exact matches report the display floor instead of -inf.
inline constexpr double kNmseFloorDb = -150.0;

// 10 log10(||truth - estimate||^2 / ||truth||^2). Both inputs are sorted
// ascending first, so the metric pairs the l-th smallest against the l-th
// smallest regardless of slot order.
inline double nmse_db(std::span<const double> truth, std::span<const double> estimate) {
  if (truth.size() != estimate.size() || truth.empty()) {
    throw ConfigError(str_printf("nmse_db: length mismatch (%zu vs %zu)", truth.size(),
                                 estimate.size()));
  }
  std::vector<double> t(truth.begin(), truth.end());
  std::vector<double> e(estimate.begin(), estimate.end());
  std::sort(t.begin(), t.end());
  std::sort(e.begin(), e.end());
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < t.size(); ++i) {
    num += (t[i] - e[i]) * (t[i] - e[i]);
    den += t[i] * t[i];
  }
  if (den == 0.0) throw NumericError("nmse_db: zero-norm truth");
  if (num == 0.0) return kNmseFloorDb;
  return std::max(10.0 * std::log10(num / den), kNmseFloorDb);
}

// Cell aggregation convention: the mean is taken over per-trial dB values.
inline double mean_db(std::span<const double> values_db) {
  if (values_db.empty()) throw ConfigError("mean_db: empty cell");
  double acc = 0.0;
  for (double v : values_db) acc += v;
  return acc / static_cast<double>(values_db.size());
}

}  // namespace fri
