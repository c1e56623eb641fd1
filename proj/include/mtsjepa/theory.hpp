#pragma once

// Executable certificates for the soft-codebook guarantees: the l1-to-l2
// Lipschitz bridge, Pinsker's inequality, the rollout stability bound, the
// entropy lemmas (two active codes, marginal-mass transfer), and the explicit
// variance floor. Each check measures its quantities from the inputs, compares
// them against the bound, and returns a row; nothing here mutates state.
//
// Certificates whose hypotheses fail report applicable=false and pass=true:
// the theorems are conditional, so a failed hypothesis makes the bound vacuous
// rather than violated.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtsjepa/rng.hpp"
#include "mtsjepa/simplex.hpp"
#include "mtsjepa/stats.hpp"
#include "mtsjepa/tensor.hpp"

namespace mtsjepa {

// Comparison slack for bounds evaluated at machine precision.
inline constexpr double kCertSlack = 1e-10;

// One checked inequality. margin is slack in the bound's favour, so
// pass <=> margin >= -kCertSlack regardless of the bound's direction.
struct CertificateRow {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
  bool pass = true;
  bool applicable = true;
};

struct CertificateReport {
  std::vector<CertificateRow> rows;
};

inline CertificateRow upper_bound_row(std::string name, double lhs,
                                      double rhs) {
  CertificateRow r;
  r.name = std::move(name);
  r.lhs = lhs;
  r.rhs = rhs;
  r.margin = rhs - lhs;
  r.pass = r.margin >= -kCertSlack;
  return r;
}

inline CertificateRow lower_bound_row(std::string name, double lhs,
                                      double rhs) {
  CertificateRow r;
  r.name = std::move(name);
  r.lhs = lhs;
  r.rhs = rhs;
  r.margin = lhs - rhs;
  r.pass = r.margin >= -kCertSlack;
  return r;
}

inline bool all_pass(const CertificateReport& rep) {
  for (const auto& r : rep.rows) {
    if (!r.pass) return false;
  }
  return true;
}

// Geometric radius M: the largest prototype norm.
inline double codebook_radius(const std::vector<std::vector<double>>& codes) {
  double m = 0.0;
  for (const auto& c : codes) {
    double sq = 0.0;
    for (double v : c) sq += v * v;
    m = std::max(m, std::sqrt(sq));
  }
  return m;
}

// z(p) = sum_k p_k c_k.
inline std::vector<double> soft_embedding(
    const std::vector<double>& p, const std::vector<std::vector<double>>& codes) {
  if (p.size() != codes.size()) {
    throw ShapeError("soft_embedding: distribution width != codebook rows");
  }
  if (codes.empty()) throw ShapeError("soft_embedding: empty codebook");
  std::size_t d = codes[0].size();
  std::vector<double> z(d, 0.0);
  for (std::size_t k = 0; k < codes.size(); ++k) {
    if (codes[k].size() != d) throw ShapeError("soft_embedding: ragged codebook");
    for (std::size_t j = 0; j < d; ++j) z[j] += p[k] * codes[k][j];
  }
  return z;
}

inline double l2_distance(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("l2_distance: size mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

// ||z(p) - z(q)||_2 <= M ||p - q||_1.
inline CertificateRow check_lipschitz(
    const std::vector<double>& p, const std::vector<double>& q,
    const std::vector<std::vector<double>>& codes) {
  double lhs = l2_distance(soft_embedding(p, codes), soft_embedding(q, codes));
  double rhs = codebook_radius(codes) * l1_distance(p, q);
  return upper_bound_row("lipschitz", lhs, rhs);
}

// ||p - q||_1 <= sqrt(2 KL(p || q)), in nats.
inline CertificateRow check_pinsker(const std::vector<double>& p,
                                    const std::vector<double>& q) {
  double lhs = l1_distance(p, q);
  double rhs = std::sqrt(2.0 * kl_exact(p, q));
  return upper_bound_row("pinsker", lhs, rhs);
}

// Inputs to the stability bound, measured from the same distributions the
// drift is computed on. eps_* are KL(target || prediction); delta is the
// l1 drift of the targets; radius is the codebook radius M.
struct StabilityInputs {
  std::vector<double> pred_t, pred_next;
  std::vector<double> target_t, target_next;
  std::vector<std::vector<double>> codebook;
  double eps_t = 0.0;
  double eps_next = 0.0;
  double delta_t = 0.0;
  double radius = 0.0;
};

inline StabilityInputs make_stability_inputs(
    std::vector<double> pred_t, std::vector<double> pred_next,
    std::vector<double> target_t, std::vector<double> target_next,
    std::vector<std::vector<double>> codebook) {
  StabilityInputs s;
  s.eps_t = kl_exact(target_t, pred_t);
  s.eps_next = kl_exact(target_next, pred_next);
  s.delta_t = l1_distance(target_next, target_t);
  s.radius = codebook_radius(codebook);
  s.pred_t = std::move(pred_t);
  s.pred_next = std::move(pred_next);
  s.target_t = std::move(target_t);
  s.target_next = std::move(target_next);
  s.codebook = std::move(codebook);
  return s;
}

// ||z(pred_next) - z(pred_t)||_2 <= M (sqrt(2 eps_next) + delta + sqrt(2 eps_t)).
inline CertificateRow check_stability_bound(const StabilityInputs& s) {
  std::size_t k = s.codebook.size();
  if (s.pred_t.size() != k || s.pred_next.size() != k ||
      s.target_t.size() != k || s.target_next.size() != k) {
    throw ShapeError("check_stability_bound: distribution width != codebook rows");
  }
  double drift = l2_distance(soft_embedding(s.pred_next, s.codebook),
                             soft_embedding(s.pred_t, s.codebook));
  double paren =
      std::sqrt(2.0 * s.eps_next) + s.delta_t + std::sqrt(2.0 * s.eps_t);
  // With M = 0 every embedding is the origin, so the bound is 0 even when
  // the KL terms are infinite; the naked product would be 0 * inf = NaN.
  double bound = s.radius == 0.0 ? 0.0 : s.radius * paren;
  return upper_bound_row("stability", drift, bound);
}

// Folds the per-step stability certificate over aligned prediction / target
// sequences and returns the tightest (minimum-margin) row.
inline CertificateRow check_stability_sequence(
    const std::vector<std::vector<double>>& preds,
    const std::vector<std::vector<double>>& targets,
    const std::vector<std::vector<double>>& codebook) {
  if (preds.size() != targets.size() || preds.size() < 2) {
    throw ShapeError("check_stability_sequence: need aligned sequences of >= 2");
  }
  CertificateRow tightest;
  bool first = true;
  for (std::size_t t = 0; t + 1 < preds.size(); ++t) {
    auto s = make_stability_inputs(preds[t], preds[t + 1], targets[t],
                                   targets[t + 1], codebook);
    CertificateRow row = check_stability_bound(s);
    if (first || row.margin < tightest.margin) {
      tightest = row;
      first = false;
    }
  }
  return tightest;
}

// Max entropy achievable by a K-way distribution whose largest mass is x:
// phi(x) = H_b(x) + (1 - x) ln(K - 1), strictly decreasing on [1/K, 1].
inline double max_entropy_at_mass(double x, std::size_t k) {
  double hb = 0.0;
  if (x > 0.0 && x < 1.0) {
    hb = -x * std::log(x) - (1.0 - x) * std::log(1.0 - x);
  }
  return hb + (1.0 - x) * std::log(static_cast<double>(k - 1));
}

// Unique root of phi(rho) = eta on [1/K, 1). Bisection runs until the bracket
// is 1e-15 wide (about 50 halvings, capped at 200): phi can be steep near 1,
// so a looser bracket would not pin phi(rho*) to eta within 1e-10.
inline double solve_rho_star(double eta, std::size_t k) {
  if (k < 2) throw std::invalid_argument("solve_rho_star: need K >= 2");
  double logk = std::log(static_cast<double>(k));
  // Measured entropies can overshoot ln K by rounding, so allow a hair above.
  if (!(eta > 0.0) || eta > logk + 1e-12) {
    throw std::invalid_argument("solve_rho_star: eta outside (0, log K]");
  }
  if (eta >= logk) return 1.0 / static_cast<double>(k);
  double lo = 1.0 / static_cast<double>(k);
  double hi = 1.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    double mid = 0.5 * (lo + hi);
    if (max_entropy_at_mass(mid, k) >= eta) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Entropy lemma: H(p̄) >= eta forces p̄_max <= rho* and guarantees a second
// code r != m with p̄_r >= beta = (1 - rho*) / (K - 1).
struct TwoActiveCodes {
  std::size_t dominant = 0;
  std::size_t runner = 0;
  double eta = 0.0;
  double rho_star = 1.0;
  double beta = 0.0;
  bool applicable = false;
  CertificateRow max_mass;
  CertificateRow runner_mass;
};

inline TwoActiveCodes check_two_active_codes(
    const std::vector<std::vector<double>>& batch, double eta) {
  if (batch.empty() || batch[0].size() < 2) {
    throw ShapeError("check_two_active_codes: need a batch of width >= 2");
  }
  std::size_t k = batch[0].size();
  std::vector<double> mean(k, 0.0);
  for (const auto& row : batch) {
    if (row.size() != k) throw ShapeError("check_two_active_codes: ragged batch");
    for (std::size_t j = 0; j < k; ++j) mean[j] += row[j];
  }
  for (double& x : mean) x /= static_cast<double>(batch.size());

  TwoActiveCodes out;
  out.eta = eta;
  out.dominant = dominant_index(mean);
  out.runner = out.dominant == 0 ? 1 : 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (j != out.dominant && mean[j] > mean[out.runner]) out.runner = j;
  }
  // The lemma is conditional on the measured entropy actually reaching eta.
  out.applicable = eta > 0.0 && entropy(mean) >= eta - kCertSlack;
  if (!out.applicable) {
    out.max_mass = upper_bound_row("two-active-max-mass", mean[out.dominant], 1.0);
    out.runner_mass = lower_bound_row("two-active-runner-mass", mean[out.runner], 0.0);
    out.max_mass.applicable = false;
    out.runner_mass.applicable = false;
    return out;
  }
  out.rho_star = solve_rho_star(std::min(eta, std::log(static_cast<double>(k))), k);
  out.beta = (1.0 - out.rho_star) / static_cast<double>(k - 1);
  out.max_mass = upper_bound_row("two-active-max-mass", mean[out.dominant], out.rho_star);
  out.runner_mass = lower_bound_row("two-active-runner-mass", mean[out.runner], out.beta);
  return out;
}

// Marginal-mass transfer under sharp assignments: with
// eps = max_i ||p_i - e_{k(i)}||_1 the dominant-code frequencies pi_hat obey
// ||p̄ - pi_hat||_1 <= eps and pi_hat_k >= p̄_k - eps for every k.
struct FreqTransfer {
  double epsilon = 0.0;
  std::vector<double> mean;
  std::vector<double> pi_hat;
  CertificateRow l1_row;
  CertificateRow coord_row;
};

inline FreqTransfer check_freq_transfer(
    const std::vector<std::vector<double>>& batch) {
  if (batch.empty()) throw ShapeError("check_freq_transfer: empty batch");
  std::size_t k = batch[0].size();
  FreqTransfer out;
  out.mean.assign(k, 0.0);
  out.pi_hat.assign(k, 0.0);
  for (const auto& row : batch) {
    if (row.size() != k) throw ShapeError("check_freq_transfer: ragged batch");
    std::size_t dom = dominant_index(row);
    out.pi_hat[dom] += 1.0;
    double dev = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out.mean[j] += row[j];
      dev += std::abs(row[j] - (j == dom ? 1.0 : 0.0));
    }
    out.epsilon = std::max(out.epsilon, dev);
  }
  double b = static_cast<double>(batch.size());
  for (std::size_t j = 0; j < k; ++j) {
    out.mean[j] /= b;
    out.pi_hat[j] /= b;
  }
  out.l1_row = upper_bound_row("freq-transfer-l1",
                               l1_distance(out.mean, out.pi_hat), out.epsilon);
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    worst = std::min(worst, out.pi_hat[j] - out.mean[j] + out.epsilon);
  }
  out.coord_row = lower_bound_row("freq-transfer-coord", worst, 0.0);
  return out;
}

// Measured hypotheses of the variance floor. eta is the batch-marginal
// entropy (the assumption holds with equality), epsilon the worst one-hot
// deviation, and (dominant, runner) the two codes the bound separates.
struct NonCollapseInputs {
  std::vector<std::vector<double>> batch;
  std::vector<std::vector<double>> codebook;
  double eta = 0.0;
  double epsilon = 0.0;
  double radius = 0.0;
  std::size_t dominant = 0;
  std::size_t runner = 0;
  double delta_c = 0.0;
  double rho_star = 1.0;
  double beta = 0.0;
  double alpha = 0.0;
};

inline NonCollapseInputs measure_non_collapse(
    std::vector<std::vector<double>> batch,
    std::vector<std::vector<double>> codebook) {
  if (batch.empty() || codebook.size() != batch[0].size()) {
    throw ShapeError("measure_non_collapse: batch width != codebook rows");
  }
  NonCollapseInputs n;
  std::vector<double> mean(batch[0].size(), 0.0);
  for (const auto& row : batch) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
  }
  for (double& x : mean) x /= static_cast<double>(batch.size());
  n.eta = entropy(mean);
  n.epsilon = check_freq_transfer(batch).epsilon;
  n.radius = codebook_radius(codebook);
  if (n.eta > 0.0) {
    TwoActiveCodes two = check_two_active_codes(batch, n.eta);
    n.dominant = two.dominant;
    n.runner = two.runner;
    n.rho_star = two.rho_star;
    n.beta = two.beta;
  } else {
    n.dominant = dominant_index(mean);
    n.runner = n.dominant == 0 ? 1 : 0;
  }
  n.alpha = std::max(n.beta - n.epsilon, 0.0);
  n.delta_c = l2_distance(codebook[n.dominant], codebook[n.runner]);
  n.batch = std::move(batch);
  n.codebook = std::move(codebook);
  return n;
}

// Tr Cov >= alpha^2 (delta_c - 2 M eps)^2, conditional on alpha > 0 and
// 2 M eps < delta_c; otherwise the bound is vacuous and the row reports
// applicable=false rather than a failure.
inline CertificateRow check_variance_lower_bound(const NonCollapseInputs& n) {
  std::vector<std::vector<double>> zrows;
  zrows.reserve(n.batch.size());
  for (const auto& p : n.batch) zrows.push_back(soft_embedding(p, n.codebook));
  double lhs = trace_cov_pairwise(zrows);
  double gap = n.delta_c - 2.0 * n.radius * n.epsilon;
  bool applicable = n.alpha > 0.0 && gap > 0.0;
  double rhs = applicable ? n.alpha * n.alpha * gap * gap : 0.0;
  CertificateRow row = lower_bound_row("variance-floor", lhs, rhs);
  row.applicable = applicable;
  if (!applicable) row.pass = true;
  return row;
}

namespace detail {

inline std::vector<double> random_simplex_point(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double s = 0.0;
  for (double& x : p) {
    x = -std::log(std::max(rng.uniform(), 0x1.0p-53));
    s += x;
  }
  for (double& x : p) x /= s;
  return p;
}

inline std::vector<std::vector<double>> random_codebook(Rng& rng, std::size_t k,
                                                        std::size_t d) {
  std::vector<std::vector<double>> codes(k, std::vector<double>(d));
  for (auto& row : codes) {
    for (double& v : row) v = rng.normal();
  }
  return codes;
}

// Keeps the instance with the least slack so the aggregated row reports the
// tightest case seen across all trials.
inline void keep_tightest(CertificateRow& acc, bool& seen,
                          const CertificateRow& row) {
  if (!seen || row.margin < acc.margin) {
    acc = row;
    seen = true;
  }
}

}  // namespace detail

// Randomized certificate suite: `trials` independent instances per family,
// aggregated to one row per family holding the minimum-margin case. A row
// fails only if some instance violated its bound. trials == 0 gives an
// empty (vacuously passing) report.
inline CertificateReport run_synthetic_certificates(std::size_t trials,
                                                    std::uint64_t seed) {
  CertificateReport rep;
  if (trials == 0) return rep;
  Rng rng(seed);

  CertificateRow lip, pin, stab, rho, two_max, two_run, freq_l1, freq_coord, var;
  bool lip_s = false, pin_s = false, stab_s = false, rho_s = false,
       two_max_s = false, two_run_s = false, freq_l1_s = false,
       freq_coord_s = false, var_s = false;

  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::size_t k = 2 + static_cast<std::size_t>(rng.below(15));
    std::size_t d = 2 + static_cast<std::size_t>(rng.below(7));
    auto codes = detail::random_codebook(rng, k, d);

    detail::keep_tightest(lip, lip_s,
                          check_lipschitz(detail::random_simplex_point(rng, k),
                                          detail::random_simplex_point(rng, k),
                                          codes));
    detail::keep_tightest(pin, pin_s,
                          check_pinsker(detail::random_simplex_point(rng, k),
                                        detail::random_simplex_point(rng, k)));
    detail::keep_tightest(
        stab, stab_s,
        check_stability_bound(make_stability_inputs(
            detail::random_simplex_point(rng, k),
            detail::random_simplex_point(rng, k),
            detail::random_simplex_point(rng, k),
            detail::random_simplex_point(rng, k), codes)));

    double logk = std::log(static_cast<double>(k));
    double eta = rng.uniform(1e-6, logk);
    double rho_star = solve_rho_star(eta, k);
    detail::keep_tightest(
        rho, rho_s,
        upper_bound_row("rho-star-residual",
                        std::abs(max_entropy_at_mass(rho_star, k) - eta),
                        1e-10));

    std::size_t b = 8 + static_cast<std::size_t>(rng.below(25));
    std::vector<std::vector<double>> batch;
    batch.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      batch.push_back(detail::random_simplex_point(rng, k));
    }
    std::vector<double> mean(k, 0.0);
    for (const auto& row : batch) {
      for (std::size_t j = 0; j < k; ++j) mean[j] += row[j];
    }
    for (double& x : mean) x /= static_cast<double>(b);
    TwoActiveCodes two = check_two_active_codes(batch, entropy(mean));
    if (two.applicable) {
      detail::keep_tightest(two_max, two_max_s, two.max_mass);
      detail::keep_tightest(two_run, two_run_s, two.runner_mass);
    }

    // Sharpened batch: round-robin dominant codes keep the marginal balanced
    // so the variance floor's hypotheses usually hold.
    std::size_t vk = 2 + static_cast<std::size_t>(rng.below(3));
    auto vcodes = detail::random_codebook(rng, vk, d);
    double sharp = 0.005 + 0.02 * rng.uniform();
    std::vector<std::vector<double>> sharp_batch;
    for (std::size_t i = 0; i < b; ++i) {
      auto u = detail::random_simplex_point(rng, vk);
      std::vector<double> p(vk, 0.0);
      std::size_t dom = i % vk;
      for (std::size_t j = 0; j < vk; ++j) {
        p[j] = sharp * u[j] + (j == dom ? 1.0 - sharp : 0.0);
      }
      sharp_batch.push_back(std::move(p));
    }
    FreqTransfer ft = check_freq_transfer(sharp_batch);
    detail::keep_tightest(freq_l1, freq_l1_s, ft.l1_row);
    detail::keep_tightest(freq_coord, freq_coord_s, ft.coord_row);
    CertificateRow vrow =
        check_variance_lower_bound(measure_non_collapse(sharp_batch, vcodes));
    if (vrow.applicable) detail::keep_tightest(var, var_s, vrow);
  }

  rep.rows.push_back(lip);
  rep.rows.push_back(pin);
  rep.rows.push_back(stab);
  rep.rows.push_back(rho);
  if (two_max_s) rep.rows.push_back(two_max);
  if (two_run_s) rep.rows.push_back(two_run);
  rep.rows.push_back(freq_l1);
  rep.rows.push_back(freq_coord);
  if (var_s) rep.rows.push_back(var);
  return rep;
}

inline nlohmann::json certificate_report_json(const CertificateReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"name", r.name},
                    {"lhs", r.lhs},
                    {"rhs", r.rhs},
                    {"margin", r.margin},
                    {"pass", r.pass},
                    {"applicable", r.applicable}});
  }
  return nlohmann::json{{"all_pass", all_pass(rep)}, {"certificates", rows}};
}

inline std::string certificate_report_table(const CertificateReport& rep) {
  char buf[160];
  std::string out =
      "certificate              lhs            rhs            margin         "
      "status\n";
  for (const auto& r : rep.rows) {
    const char* status = !r.applicable ? "n/a" : (r.pass ? "pass" : "FAIL");
    std::snprintf(buf, sizeof(buf), "%-24s %- 14.6e %- 14.6e %- 14.6e %s\n",
                  r.name.c_str(), r.lhs, r.rhs, r.margin, status);
    out += buf;
  }
  return out;
}

}  // namespace mtsjepa
