#pragma once

// Embedding-spread statistics shared by the collapse monitor and the
// certificate checks. Both covariance forms are population (divide by n).

#include <cstddef>
#include <vector>

#include "mtsjepa/tensor.hpp"

namespace mtsjepa {

// Tr Cov computed from the mean embedding.
inline double trace_cov(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return 0.0;
  std::size_t d = rows[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("trace_cov: ragged rows");
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (double& x : mean) x /= static_cast<double>(rows.size());
  double acc = 0.0;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      double dv = r[j] - mean[j];
      acc += dv * dv;
    }
  }
  return acc / static_cast<double>(rows.size());
}

// The same quantity through the pairwise identity
//   Tr Cov = (1 / 2n^2) * sum_{i,j} ||x_i - x_j||^2,
// the form the variance certificates reason about.
inline double trace_cov_pairwise(const std::vector<std::vector<double>>& rows) {
  std::size_t n = rows.size();
  if (n == 0) return 0.0;
  std::size_t d = rows[0].size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != d) throw ShapeError("trace_cov_pairwise: ragged rows");
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double dv = rows[i][c] - rows[j][c];
        sq += dv * dv;
      }
      acc += 2.0 * sq;
    }
  }
  return 0.5 * acc / (static_cast<double>(n) * static_cast<double>(n));
}

}  // namespace mtsjepa
