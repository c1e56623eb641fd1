#pragma once

// Independent reference implementations used to pin down the library's
// numerics. Everything here is deliberately the dumbest correct version.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "mtsjepa/rng.hpp"
#include "mtsjepa/tensor.hpp"

namespace oracles {

// Triple-loop matrix product, no blocking, no reordering.
inline std::vector<double> matmul_naive(const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        std::size_t n, std::size_t k,
                                        std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
  }
  return c;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

// Central finite differences against reverse-mode gradients. `build` must
// reconstruct the scalar loss from scratch on every call, reading the leaf
// tensors' current values. Checks every coordinate unless `max_coords`
// limits it, in which case coordinates are sampled with `rng`.
template <typename Builder>
GradCheckResult grad_check(Builder&& build, std::vector<mtsjepa::Tensor> leaves,
                           double h = 1e-5,
                           std::size_t max_coords = static_cast<std::size_t>(-1),
                           mtsjepa::Rng* rng = nullptr) {
  using namespace mtsjepa;
  GradTape::active().clear();
  for (auto& p : leaves) p.zero_grad();
  Tensor loss = build();
  GradTape::active().backward(loss);
  std::vector<std::vector<double>> ad;
  ad.reserve(leaves.size());
  for (auto& p : leaves) ad.push_back(p.grad_values());
  GradTape::active().clear();

  GradCheckResult res;
  NoGradGuard ng;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = leaves[li].mutable_values();
    std::vector<std::size_t> coords;
    if (vals.size() <= max_coords) {
      for (std::size_t i = 0; i < vals.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t c = 0; c < max_coords; ++c) {
        coords.push_back(static_cast<std::size_t>(rng->below(vals.size())));
      }
    }
    for (std::size_t i : coords) {
      double orig = vals[i];
      vals[i] = orig + h;
      double f_plus = build().scalar_value();
      vals[i] = orig - h;
      double f_minus = build().scalar_value();
      vals[i] = orig;
      double fd = (f_plus - f_minus) / (2.0 * h);
      double a = ad[li][i];
      double rel =
          std::abs(a - fd) / (std::max(std::abs(a), std::abs(fd)) + 1e-8);
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.coords_checked;
    }
  }
  return res;
}

// Exact KL divergence sum_k p_k ln(p_k / q_k) with 0 ln 0 := 0.
inline double kl_naive(const std::vector<double>& p,
                       const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) s += p[k] * std::log(p[k] / q[k]);
  }
  return s;
}

inline double l1_dist(const std::vector<double>& p,
                      const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return s;
}

inline double entropy_naive(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) {
    if (x > 0.0) s -= x * std::log(x);
  }
  return s;
}

// Random simplex vector with strictly positive entries.
inline std::vector<double> random_simplex(mtsjepa::Rng& rng, std::size_t k,
                                          double sharpness = 1.0) {
  std::vector<double> p(k);
  double mx = -1e300;
  for (double& x : p) {
    x = sharpness * rng.normal();
    mx = std::max(mx, x);
  }
  double z = 0.0;
  for (double& x : p) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : p) x /= z;
  return p;
}

// Independent Adam reimplementation in the folded step-size form
//   alpha_t = lr * sqrt(1 - b2^t) / (1 - b1^t)
//   theta  -= alpha_t * m / (sqrt(v) + eps * sqrt(1 - b2^t))
// which is algebraically identical to the bias-corrected form but rounds
// differently, so agreement is evidence of matching formulas rather than
// matching code. Weight decay is classic L2 added to the gradient.
struct AdamRefState {
  std::vector<double> m, v;
  std::uint64_t t = 0;
};

inline void adam_reference_step(std::vector<double>& theta,
                                const std::vector<double>& grad,
                                AdamRefState& st, double lr, double wd,
                                double b1 = 0.9, double b2 = 0.999,
                                double eps = 1e-8) {
  if (st.m.size() != theta.size()) {
    st.m.assign(theta.size(), 0.0);
    st.v.assign(theta.size(), 0.0);
  }
  ++st.t;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  double alpha = lr * std::sqrt(bc2) / bc1;
  double eps_hat = eps * std::sqrt(bc2);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double g = grad[i] + wd * theta[i];
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
    theta[i] -= alpha * st.m[i] / (std::sqrt(st.v[i]) + eps_hat);
  }
}

// Population trace covariance computed directly from the mean.
inline double trace_cov_direct(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return 0.0;
  std::size_t d = rows[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (double& x : mean) x /= static_cast<double>(rows.size());
  double acc = 0.0;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      double dv = r[j] - mean[j];
      acc += dv * dv;
    }
  return acc / static_cast<double>(rows.size());
}


// Max-entropy curve phi(x) = H_b(x) + (1 - x) ln(K - 1) evaluated directly,
// with the 0 ln 0 convention at both ends.
inline double phi_max_entropy(double x, std::size_t k) {
  double hb = 0.0;
  if (x > 0.0 && x < 1.0) {
    hb = -x * std::log(x) - (1.0 - x) * std::log(1.0 - x);
  }
  return hb + (1.0 - x) * std::log(static_cast<double>(k - 1));
}

// Dense-grid argmin of |phi(x) - eta| over [1/K, 1). With two million points
// the grid step is below 5e-7, so the scan pins the root to that resolution
// without any root-finding cleverness.
inline double rho_star_scan(double eta, std::size_t k,
                            std::size_t grid = 2000000) {
  double lo = 1.0 / static_cast<double>(k);
  double best_x = lo;
  double best_err = std::abs(phi_max_entropy(lo, k) - eta);
  for (std::size_t i = 1; i < grid; ++i) {
    double x = lo + (1.0 - lo) * static_cast<double>(i) /
                        static_cast<double>(grid);
    double err = std::abs(phi_max_entropy(x, k) - eta);
    if (err < best_err) {
      best_err = err;
      best_x = x;
    }
  }
  return best_x;
}


// Exhaustive F1 threshold scan: every midpoint between consecutive distinct
// sorted scores plus the two infinite endpoints, each evaluated by a fresh
// pass over the data with the strict rule "positive iff score > delta".
// Returns the lowest threshold achieving the maximum F1.
struct ThresholdScan {
  double threshold = 0.0;
  double f1 = 0.0;
};

inline ThresholdScan best_threshold_exhaustive(const std::vector<double>& s,
                                               const std::vector<int>& y) {
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cands;
  cands.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    if (sorted[i] < sorted[i + 1]) {
      cands.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    }
  }
  cands.push_back(std::numeric_limits<double>::infinity());
  ThresholdScan best;
  best.threshold = -std::numeric_limits<double>::infinity();
  best.f1 = -1.0;
  for (double delta : cands) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      bool pred = s[i] > delta;
      if (pred && y[i]) ++tp;
      if (pred && !y[i]) ++fp;
      if (!pred && y[i]) ++fn;
    }
    double p = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double r = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    double f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    if (f1 > best.f1) {
      best.f1 = f1;
      best.threshold = delta;
    }
  }
  return best;
}

// AUC by direct comparison of every positive/negative pair, ties worth 1/2.
inline double auc_pairwise(const std::vector<double>& s,
                           const std::vector<int>& y) {
  double wins = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++np;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  for (int v : y) nn += v ? 0 : 1;
  return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

}  // namespace oracles
