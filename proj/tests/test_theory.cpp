#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtsjepa/model_certificates.hpp"
#include "mtsjepa/theory.hpp"
#include "mtsjepa/trainer.hpp"
#include "support/oracles.hpp"

using namespace mtsjepa;

namespace {

std::vector<double> one_hot(std::size_t k, std::size_t i) {
  std::vector<double> p(k, 0.0);
  p[i] = 1.0;
  return p;
}

std::vector<double> rand_simplex(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double s = 0.0;
  for (double& x : p) {
    x = -std::log(std::max(rng.uniform(), 1e-16));
    s += x;
  }
  for (double& x : p) x /= s;
  return p;
}

std::vector<std::vector<double>> rand_codes(Rng& rng, std::size_t k,
                                            std::size_t d) {
  std::vector<std::vector<double>> c(k, std::vector<double>(d));
  for (auto& row : c) {
    for (double& v : row) v = rng.normal();
  }
  return c;
}

// Batch whose rows are (1 - s) e_{i mod k} + s u_i for random simplex u_i.
std::vector<std::vector<double>> sharp_batch(Rng& rng, std::size_t b,
                                             std::size_t k, double s) {
  std::vector<std::vector<double>> rows;
  rows.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto u = rand_simplex(rng, k);
    std::vector<double> p(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = s * u[j] + (j == i % k ? 1.0 - s : 0.0);
    }
    rows.push_back(std::move(p));
  }
  return rows;
}

NetConfig tiny_net() {
  NetConfig n;
  n.n_patches = 2;
  n.patch_len = 4;
  n.embed_dim = 8;
  n.enc_layers = 1;
  n.enc_heads = 2;
  n.ff_mult = 2;
  n.tok_hidden1 = 4;
  n.tok_hidden2 = 4;
  n.codebook_size = 4;
  n.pred_width = 8;
  n.pred_layers = 1;
  n.pred_heads = 2;
  n.dec_hidden = 8;
  n.max_positions = 4;
  n.dropout = 0.1;
  return n;
}

std::vector<double> tensor_row(const Tensor& t, std::size_t r) {
  std::size_t cols = t.shape()[1];
  std::vector<double> out(cols);
  for (std::size_t j = 0; j < cols; ++j) out[j] = t.at(r, j);
  return out;
}

std::vector<std::vector<double>> prototype_rows(const Codebook& cb) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < cb.k(); ++i) {
    rows.push_back(tensor_row(cb.prototypes, i));
  }
  return rows;
}

}  // namespace

TEST_CASE("soft embedding maps vertices to prototypes and lipschitz holds") {
  std::vector<std::vector<double>> codes = {{0.6, 0.0}, {-0.8, 0.3}};

  SECTION("vertex case") {
    auto z1 = soft_embedding(one_hot(2, 0), codes);
    REQUIRE(z1[0] == 0.6);
    REQUIRE(z1[1] == 0.0);
    CertificateRow row = check_lipschitz(one_hot(2, 0), one_hot(2, 1), codes);
    double dc = std::sqrt(1.4 * 1.4 + 0.3 * 0.3);
    REQUIRE(row.lhs == Catch::Approx(dc).margin(1e-15));
    double m = std::sqrt(0.8 * 0.8 + 0.3 * 0.3);
    REQUIRE(row.rhs == Catch::Approx(2.0 * m).margin(1e-15));
    REQUIRE(row.rhs <= 2.0);
    REQUIRE(row.pass);
  }

  SECTION("identical distributions give zero on both sides") {
    std::vector<double> p = {0.3, 0.7};
    CertificateRow row = check_lipschitz(p, p, codes);
    REQUIRE(row.lhs == 0.0);
    REQUIRE(row.rhs == 0.0);
    REQUIRE(row.pass);
  }

  SECTION("shape mismatch throws") {
    REQUIRE_THROWS_AS(soft_embedding(one_hot(3, 0), codes), ShapeError);
  }

  SECTION("10000 random triples never violate the bound") {
    Rng rng(5);
    for (int t = 0; t < 10000; ++t) {
      std::size_t k = 2 + rng.below(15);
      std::size_t d = 1 + rng.below(8);
      auto cb = rand_codes(rng, k, d);
      CertificateRow row =
          check_lipschitz(rand_simplex(rng, k), rand_simplex(rng, k), cb);
      REQUIRE(row.pass);
    }
  }
}

TEST_CASE("pinsker inequality certificate") {
  SECTION("closed form at a degenerate pair") {
    CertificateRow row = check_pinsker({1.0, 0.0}, {0.5, 0.5});
    REQUIRE(row.lhs == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(row.rhs == Catch::Approx(1.1774100225154747).margin(1e-12));
    REQUIRE(row.pass);
  }

  SECTION("identical distributions sit on the boundary") {
    std::vector<double> p = {0.2, 0.5, 0.3};
    CertificateRow row = check_pinsker(p, p);
    REQUIRE(row.lhs == 0.0);
    REQUIRE(row.rhs == 0.0);
    REQUIRE(row.pass);
  }

  SECTION("10000 random pairs never violate the bound") {
    Rng rng(7);
    for (int t = 0; t < 10000; ++t) {
      std::size_t k = 2 + rng.below(15);
      CertificateRow row =
          check_pinsker(rand_simplex(rng, k), rand_simplex(rng, k));
      REQUIRE(row.pass);
    }
  }
}

TEST_CASE("stability bound hand cases") {
  std::vector<std::vector<double>> codes = {{1.0, 0.0}, {-1.0, 0.0}};

  SECTION("zero hypotheses force zero drift") {
    auto p = std::vector<double>{0.6, 0.4};
    StabilityInputs s = make_stability_inputs(p, p, p, p, codes);
    REQUIRE(s.eps_t == 0.0);
    REQUIRE(s.eps_next == 0.0);
    REQUIRE(s.delta_t == 0.0);
    CertificateRow row = check_stability_bound(s);
    REQUIRE(row.lhs == 0.0);
    REQUIRE(row.rhs == 0.0);
    REQUIRE(row.pass);
  }

  SECTION("target jump with perfect predictions") {
    StabilityInputs s = make_stability_inputs(one_hot(2, 0), one_hot(2, 1),
                                              one_hot(2, 0), one_hot(2, 1),
                                              codes);
    REQUIRE(s.eps_t == 0.0);
    REQUIRE(s.eps_next == 0.0);
    REQUIRE(s.delta_t == 2.0);
    REQUIRE(s.radius == 1.0);
    CertificateRow row = check_stability_bound(s);
    REQUIRE(row.lhs == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(row.rhs == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(row.pass);
  }

  SECTION("mismatched widths throw") {
    StabilityInputs s = make_stability_inputs(one_hot(2, 0), one_hot(2, 1),
                                              one_hot(2, 0), one_hot(2, 1),
                                              codes);
    s.pred_t = one_hot(3, 0);
    REQUIRE_THROWS_AS(check_stability_bound(s), ShapeError);
  }

  SECTION("zero-radius codebook keeps the bound finite") {
    std::vector<std::vector<double>> zero = {{0.0, 0.0}, {0.0, 0.0}};
    StabilityInputs s = make_stability_inputs(one_hot(2, 0), one_hot(2, 1),
                                              one_hot(2, 1), one_hot(2, 0),
                                              zero);
    CertificateRow row = check_stability_bound(s);
    REQUIRE(row.lhs == 0.0);
    REQUIRE(row.rhs == 0.0);
    REQUIRE(row.pass);
  }
}

TEST_CASE("stability bound over 10000 synthetic tuples") {
  Rng rng(13);
  for (int t = 0; t < 10000; ++t) {
    std::size_t k = 2 + rng.below(15);
    std::size_t d = 2 + rng.below(7);
    auto codes = rand_codes(rng, k, d);
    StabilityInputs s = make_stability_inputs(
        rand_simplex(rng, k), rand_simplex(rng, k), rand_simplex(rng, k),
        rand_simplex(rng, k), codes);
    CertificateRow row = check_stability_bound(s);
    REQUIRE(row.pass);
  }
}

TEST_CASE("stability bound over a model rollout on synthetic data") {
  TrainConfig cfg;
  cfg.net = tiny_net();
  cfg.window_stride = 4;
  cfg.seed = 29;
  SynthConfig sc;
  sc.anomaly_rate = 0.0;
  RawSeries raw = synth_regime_series(3, 830, 1, sc);
  PreparedData data = prepare_training_data(raw, cfg);
  REQUIRE(data.pairs.size() >= 200);

  TrainerState st = make_trainer(cfg);
  std::size_t w = cfg.net.window_len();
  std::size_t last = cfg.net.n_patches - 1;

  std::vector<std::vector<double>> preds, targets_seq;
  {
    NoGradGuard ng;
    ForwardCtx ctx;
    for (std::size_t i = 0; i < 200; ++i) {
      const WindowPair& pr = data.pairs[i];
      std::vector<double> raw_ctx = window_channel(data.series, pr.start, w, 0);
      RevinStats rs = revin_fit(raw_ctx.data(), raw_ctx.size());
      std::vector<double> norm_ctx(w);
      revin_normalize(raw_ctx.data(), w, rs, norm_ctx.data());
      Tensor fine = Tensor::from_values(
          {cfg.net.n_patches, cfg.net.patch_len},
          patchify(norm_ctx, cfg.net.n_patches, cfg.net.patch_len));
      Tensor h = st.model.encoder(fine, ctx);
      Tensor p = soft_assign(st.model.codebook, h);
      FinePrediction fp = st.model.fine(p, ctx);
      preds.push_back(tensor_row(fp.dist, last));

      std::vector<double> raw_next =
          window_channel(data.series, pr.start + w, w, 0);
      RevinStats rs2 = revin_fit(raw_next.data(), raw_next.size());
      std::vector<double> norm_next(w);
      revin_normalize(raw_next.data(), w, rs2, norm_next.data());
      Tensor fine_next = Tensor::from_values(
          {cfg.net.n_patches, cfg.net.patch_len},
          patchify(norm_next, cfg.net.n_patches, cfg.net.patch_len));
      Tensor ht = st.targets.encoder(fine_next, ctx);
      Tensor pt = soft_assign(st.targets.codebook, ht);
      targets_seq.push_back(tensor_row(pt, last));
    }
  }

  auto codes = prototype_rows(st.model.codebook);
  for (std::size_t t = 0; t + 1 < preds.size(); ++t) {
    StabilityInputs s = make_stability_inputs(preds[t], preds[t + 1],
                                              targets_seq[t],
                                              targets_seq[t + 1], codes);
    REQUIRE(check_stability_bound(s).pass);
  }
  CertificateRow tight = check_stability_sequence(preds, targets_seq, codes);
  REQUIRE(tight.pass);
  REQUIRE(tight.margin >= -kCertSlack);
}

TEST_CASE("rho star solver") {
  SECTION("max-entropy endpoint returns 1/K") {
    for (std::size_t k : {2ul, 8ul, 32ul, 128ul}) {
      double eta = std::log(static_cast<double>(k));
      REQUIRE(solve_rho_star(eta, k) == 1.0 / static_cast<double>(k));
    }
  }

  SECTION("binary entropy maximum") {
    REQUIRE(solve_rho_star(std::log(2.0), 2) == 0.5);
    double r = solve_rho_star(0.5, 2);
    REQUIRE(r > 0.5);
    REQUIRE(max_entropy_at_mass(r, 2) == Catch::Approx(0.5).margin(1e-10));
  }

  SECTION("matches a dense grid scan") {
    double eta = 0.5 * std::log(128.0);
    double r = solve_rho_star(eta, 128);
    double scan = oracles::rho_star_scan(eta, 128);
    REQUIRE(r == Catch::Approx(scan).margin(1e-6));
  }

  SECTION("solution satisfies the defining equation at 1e-10") {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
      std::size_t k = 2 + rng.below(127);
      double eta = rng.uniform(1e-4, std::log(static_cast<double>(k)));
      double r = solve_rho_star(eta, k);
      REQUIRE(r >= 1.0 / static_cast<double>(k));
      REQUIRE(r < 1.0);
      REQUIRE(std::abs(max_entropy_at_mass(r, k) - eta) < 1e-10);
    }
  }

  SECTION("domain errors") {
    REQUIRE_THROWS_AS(solve_rho_star(0.0, 4), std::invalid_argument);
    REQUIRE_THROWS_AS(solve_rho_star(-1.0, 4), std::invalid_argument);
    REQUIRE_THROWS_AS(solve_rho_star(std::log(4.0) + 0.1, 4),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(solve_rho_star(0.5, 1), std::invalid_argument);
  }
}

TEST_CASE("max entropy curve is strictly decreasing on [1/K, 1)") {
  for (std::size_t k : {2ul, 8ul, 32ul, 128ul}) {
    double lo = 1.0 / static_cast<double>(k);
    REQUIRE(max_entropy_at_mass(lo, k) ==
            Catch::Approx(std::log(static_cast<double>(k))).margin(1e-12));
    double prev = max_entropy_at_mass(lo, k);
    for (int i = 1; i < 10000; ++i) {
      double x = lo + (1.0 - lo) * static_cast<double>(i) / 10000.0;
      double cur = max_entropy_at_mass(x, k);
      REQUIRE(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("two active codes lemma") {
  SECTION("uniform batch sits exactly at the bound") {
    std::vector<std::vector<double>> batch(3,
                                           std::vector<double>(4, 0.25));
    TwoActiveCodes two = check_two_active_codes(batch, std::log(4.0));
    REQUIRE(two.applicable);
    REQUIRE(two.dominant == 0);
    REQUIRE(two.runner == 1);
    REQUIRE(two.rho_star == 0.25);
    REQUIRE(two.beta == Catch::Approx(0.25).margin(1e-15));
    REQUIRE(two.max_mass.pass);
    REQUIRE(two.max_mass.margin == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(two.runner_mass.pass);
  }

  SECTION("two one-hot rows with equal mass") {
    std::vector<std::vector<double>> batch = {one_hot(2, 0), one_hot(2, 1)};
    TwoActiveCodes two = check_two_active_codes(batch, std::log(2.0));
    REQUIRE(two.applicable);
    REQUIRE(two.dominant == 0);
    REQUIRE(two.runner == 1);
    REQUIRE(two.rho_star == 0.5);
    REQUIRE(two.beta == 0.5);
    REQUIRE(two.max_mass.pass);
    REQUIRE(two.runner_mass.pass);
  }

  SECTION("entropy below the supplied level is reported, not thrown") {
    std::vector<std::vector<double>> batch = {one_hot(3, 1), one_hot(3, 1)};
    TwoActiveCodes two = check_two_active_codes(batch, 0.5);
    REQUIRE_FALSE(two.applicable);
    REQUIRE_FALSE(two.max_mass.applicable);
    REQUIRE(two.max_mass.pass);
    REQUIRE(two.dominant == 1);
  }

  SECTION("bad shapes throw") {
    REQUIRE_THROWS_AS(
        check_two_active_codes(std::vector<std::vector<double>>{}, 0.5),
        ShapeError);
    std::vector<std::vector<double>> narrow = {{1.0}};
    REQUIRE_THROWS_AS(check_two_active_codes(narrow, 0.5), ShapeError);
  }

  SECTION("1000 random batches never exceed rho star at measured entropy") {
    Rng rng(17);
    for (int t = 0; t < 1000; ++t) {
      std::size_t k = 2 + rng.below(15);
      std::size_t b = 4 + rng.below(29);
      std::vector<std::vector<double>> batch;
      std::vector<double> mean(k, 0.0);
      for (std::size_t i = 0; i < b; ++i) {
        batch.push_back(rand_simplex(rng, k));
        for (std::size_t j = 0; j < k; ++j) mean[j] += batch.back()[j];
      }
      for (double& x : mean) x /= static_cast<double>(b);
      TwoActiveCodes two = check_two_active_codes(batch, entropy(mean));
      REQUIRE(two.applicable);
      REQUIRE(two.max_mass.pass);
      REQUIRE(two.runner_mass.pass);
    }
  }
}

TEST_CASE("marginal mass transfer under sharp assignments") {
  SECTION("exact one-hot batch collapses both sides") {
    std::vector<std::vector<double>> batch = {one_hot(3, 0), one_hot(3, 2),
                                              one_hot(3, 0)};
    FreqTransfer ft = check_freq_transfer(batch);
    REQUIRE(ft.epsilon == 0.0);
    REQUIRE(ft.mean == ft.pi_hat);
    REQUIRE(ft.l1_row.lhs == 0.0);
    REQUIRE(ft.l1_row.pass);
    REQUIRE(ft.coord_row.pass);
  }

  SECTION("bounded deviation bounds the marginal gap") {
    // Rows are 0.95 e_k + 0.05 e_j, so every one-hot deviation is exactly 0.1.
    std::vector<std::vector<double>> batch = {{0.95, 0.05, 0.0},
                                              {0.0, 0.95, 0.05},
                                              {0.05, 0.0, 0.95}};
    FreqTransfer ft = check_freq_transfer(batch);
    REQUIRE(ft.epsilon == Catch::Approx(0.1).margin(1e-15));
    REQUIRE(ft.l1_row.lhs <= 0.1 + 1e-15);
    REQUIRE(ft.l1_row.pass);
    REQUIRE(ft.coord_row.pass);
  }

  SECTION("1000 random sharp batches never violate either inequality") {
    Rng rng(19);
    for (int t = 0; t < 1000; ++t) {
      std::size_t k = 2 + rng.below(7);
      std::size_t b = 6 + rng.below(27);
      double s = 0.4 * rng.uniform();
      FreqTransfer ft = check_freq_transfer(sharp_batch(rng, b, k, s));
      REQUIRE(ft.l1_row.pass);
      REQUIRE(ft.coord_row.pass);
    }
  }
}

TEST_CASE("variance floor certificate") {
  SECTION("worked equality case") {
    std::vector<std::vector<double>> codes = {{1.0, 0.0}, {-1.0, 0.0}};
    std::vector<std::vector<double>> batch = {one_hot(2, 0), one_hot(2, 1)};
    NonCollapseInputs n = measure_non_collapse(batch, codes);
    REQUIRE(n.eta == Catch::Approx(std::log(2.0)).margin(1e-15));
    REQUIRE(n.epsilon == 0.0);
    REQUIRE(n.radius == 1.0);
    REQUIRE(n.rho_star == 0.5);
    REQUIRE(n.beta == 0.5);
    REQUIRE(n.alpha == 0.5);
    REQUIRE(n.delta_c == 2.0);
    CertificateRow row = check_variance_lower_bound(n);
    REQUIRE(row.applicable);
    std::vector<std::vector<double>> zr = {{1.0, 0.0}, {-1.0, 0.0}};
    REQUIRE(row.lhs == Catch::Approx(oracles::trace_cov_direct(zr)).margin(1e-15));
    REQUIRE(row.lhs == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(row.rhs == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(row.margin == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(row.pass);
  }

  SECTION("alpha collapsing to zero reports not-applicable") {
    std::vector<std::vector<double>> codes = {{1.0, 0.0}, {-1.0, 0.0}};
    std::vector<std::vector<double>> batch = {one_hot(2, 0), one_hot(2, 0)};
    NonCollapseInputs n = measure_non_collapse(batch, codes);
    REQUIRE(n.eta == 0.0);
    REQUIRE(n.alpha == 0.0);
    CertificateRow row = check_variance_lower_bound(n);
    REQUIRE_FALSE(row.applicable);
    REQUIRE(row.pass);
  }

  SECTION("insufficient prototype separation reports not-applicable") {
    std::vector<std::vector<double>> codes = {{0.7, 0.1}, {0.7, 0.1}};
    std::vector<std::vector<double>> batch = {one_hot(2, 0), one_hot(2, 1)};
    NonCollapseInputs n = measure_non_collapse(batch, codes);
    REQUIRE(n.delta_c == 0.0);
    CertificateRow row = check_variance_lower_bound(n);
    REQUIRE_FALSE(row.applicable);
    REQUIRE(row.pass);
  }

  SECTION("1000 constructed sharp batches never violate the bound") {
    Rng rng(23);
    int applicable = 0;
    for (int t = 0; t < 1000; ++t) {
      std::size_t k = 2 + rng.below(3);
      std::size_t d = 2 + rng.below(7);
      std::size_t b = 12 + rng.below(21);
      double s = 0.005 + 0.02 * rng.uniform();
      auto codes = rand_codes(rng, k, d);
      NonCollapseInputs n =
          measure_non_collapse(sharp_batch(rng, b, k, s), codes);
      CertificateRow row = check_variance_lower_bound(n);
      REQUIRE(row.pass);
      if (row.applicable) ++applicable;
    }
    REQUIRE(applicable > 900);
  }
}

TEST_CASE("synthetic certificate suite") {
  SECTION("zero trials give an empty valid report") {
    CertificateReport rep = run_synthetic_certificates(0, 1);
    REQUIRE(rep.rows.empty());
    REQUIRE(all_pass(rep));
    nlohmann::json j = certificate_report_json(rep);
    REQUIRE(j["all_pass"].get<bool>());
    REQUIRE(j["certificates"].empty());
  }

  SECTION("aggregated families all pass") {
    CertificateReport rep = run_synthetic_certificates(200, 3);
    REQUIRE(all_pass(rep));
    std::vector<std::string> want = {
        "lipschitz",          "pinsker",
        "stability",          "rho-star-residual",
        "two-active-max-mass", "two-active-runner-mass",
        "freq-transfer-l1",   "freq-transfer-coord",
        "variance-floor"};
    REQUIRE(rep.rows.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      REQUIRE(rep.rows[i].name == want[i]);
      REQUIRE(rep.rows[i].pass);
    }
  }

  SECTION("json and table render every row") {
    CertificateReport rep = run_synthetic_certificates(50, 9);
    nlohmann::json j = certificate_report_json(rep);
    REQUIRE(j["all_pass"].get<bool>());
    REQUIRE(j["certificates"].size() == rep.rows.size());
    for (const auto& c : j["certificates"]) {
      REQUIRE(c.contains("name"));
      REQUIRE(c.contains("lhs"));
      REQUIRE(c.contains("rhs"));
      REQUIRE(c.contains("margin"));
      REQUIRE(c.contains("pass"));
      REQUIRE(c.contains("applicable"));
    }
    std::string table = certificate_report_table(rep);
    REQUIRE(table.find("lipschitz") != std::string::npos);
    REQUIRE(table.find("FAIL") == std::string::npos);
  }

  SECTION("identical seeds give identical reports") {
    nlohmann::json a = certificate_report_json(run_synthetic_certificates(40, 77));
    nlohmann::json b = certificate_report_json(run_synthetic_certificates(40, 77));
    REQUIRE(a.dump() == b.dump());
  }
}

TEST_CASE("pairwise covariance identity backs the variance floor") {
  Rng rng(37);
  for (int t = 0; t < 50; ++t) {
    std::size_t n = 2 + rng.below(20);
    std::size_t d = 1 + rng.below(6);
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (auto& r : rows) {
      for (double& x : r) x = rng.normal(0.0, 2.0);
    }
    REQUIRE(trace_cov_pairwise(rows) ==
            Catch::Approx(trace_cov(rows)).margin(1e-10));
  }
}

TEST_CASE("model certificate suite") {
  TrainConfig cfg;
  cfg.net = tiny_net();
  cfg.seed = 53;
  TrainerState st = make_trainer(cfg);
  SynthConfig sc;
  sc.anomaly_rate = 0.0;
  RawSeries raw = synth_regime_series(8, 600, 2, sc);

  SECTION("all measured bounds hold on a fresh model") {
    CertificateReport rep = run_model_certificates(st.model, st.targets, raw);
    REQUIRE(rep.rows.size() >= 6);
    REQUIRE(rep.rows[0].name == "model-lipschitz");
    REQUIRE(rep.rows[1].name == "model-pinsker");
    REQUIRE(rep.rows[2].name == "model-stability");
    REQUIRE(all_pass(rep));
    bool saw_freq = false, saw_var = false;
    for (const auto& r : rep.rows) {
      if (r.name == "model-freq-transfer-l1") saw_freq = true;
      if (r.name == "model-variance-floor") saw_var = true;
      REQUIRE(r.pass);
    }
    REQUIRE(saw_freq);
    REQUIRE(saw_var);
  }

  SECTION("deterministic for identical inputs") {
    CertificateReport a = run_model_certificates(st.model, st.targets, raw);
    CertificateReport b = run_model_certificates(st.model, st.targets, raw);
    REQUIRE(certificate_report_json(a).dump() ==
            certificate_report_json(b).dump());
  }

  SECTION("bypass models are rejected") {
    TrainConfig bp = cfg;
    bp.net.codebook_bypass = true;
    TrainerState sb = make_trainer(bp);
    REQUIRE_THROWS_AS(run_model_certificates(sb.model, sb.targets, raw),
                      DataError);
  }

  SECTION("too-short series is rejected") {
    RawSeries shorty = synth_regime_series(8, 2 * cfg.net.window_len(), 1, sc);
    REQUIRE_THROWS_AS(run_model_certificates(st.model, st.targets, shorty),
                      DataError);
  }
}
