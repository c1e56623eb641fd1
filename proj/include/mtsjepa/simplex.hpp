#pragma once

// Value-level helpers for probability vectors (no autodiff involved).

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace mtsjepa {

// Natural-log entropy with the 0 ln 0 := 0 convention.
inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

// Exact KL(p || q); infinite when q lacks mass where p has it.
inline double kl_exact(const std::vector<double>& p,
                       const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) {
      if (q[k] <= 0.0) return std::numeric_limits<double>::infinity();
      s += p[k] * std::log(p[k] / q[k]);
    }
  }
  return s;
}

inline double l1_distance(const std::vector<double>& p,
                          const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return s;
}

// Ties break toward the lowest index.
inline std::size_t dominant_index(const double* p, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < k; ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

inline std::size_t dominant_index(const std::vector<double>& p) {
  return dominant_index(p.data(), p.size());
}

inline bool is_simplex(const std::vector<double>& p, double tol = 1e-9) {
  double s = 0.0;
  for (double x : p) {
    if (x < -tol) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= tol;
}

// Mean of the rows of a row-major [n, k] block of distributions.
inline std::vector<double> mean_distribution(const std::vector<double>& rows,
                                             std::size_t k) {
  if (k == 0 || rows.size() % k != 0) {
    throw std::invalid_argument("mean_distribution: bad row width");
  }
  std::size_t n = rows.size() / k;
  std::vector<double> mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) mean[j] += rows[i * k + j];
  }
  for (double& x : mean) x /= static_cast<double>(n);
  return mean;
}

}  // namespace mtsjepa
