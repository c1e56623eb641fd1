#pragma once

// Certificates measured on a live model: encode consecutive windows of a
// series, collect predicted and target code distributions per variable, and
// evaluate every bound on the measured quantities. Complements the synthetic
// suite, which exercises the same checks on constructed inputs.

#include <cstddef>
#include <string>
#include <vector>

#include "mtsjepa/codebook.hpp"
#include "mtsjepa/data.hpp"
#include "mtsjepa/networks.hpp"
#include "mtsjepa/theory.hpp"

namespace mtsjepa {

namespace detail {

inline std::vector<double> dist_row(const Tensor& t, std::size_t row) {
  const Shape& s = t.shape();
  std::vector<double> out(s[1]);
  for (std::size_t j = 0; j < s[1]; ++j) out[j] = t.values()[row * s[1] + j];
  return out;
}

inline Tensor encode_window(const Model& model, const NetConfig& net,
                            const RawSeries& series, std::size_t start,
                            std::size_t var, ForwardCtx& ctx, bool teacher,
                            const TargetNets& targets) {
  std::size_t w = net.window_len();
  std::vector<double> raw = window_channel(series, start, w, var);
  RevinStats rs = revin_fit(raw.data(), raw.size());
  std::vector<double> norm(w);
  revin_normalize(raw.data(), w, rs, norm.data());
  Tensor fine = Tensor::from_values(
      {net.n_patches, net.patch_len},
      patchify(norm, net.n_patches, net.patch_len));
  return teacher ? targets.encoder(fine, ctx) : model.encoder(fine, ctx);
}

}  // namespace detail

// Runs the full certificate set on rollouts of `model` over `series`,
// consuming at most `max_steps` consecutive window pairs per variable
// (`stride` 0 means non-overlapping windows). Predicted distributions come
// from the online fine predictor's last patch; reference distributions from
// the target encoder on the next window. Batch-level certificates pool every
// per-patch assignment row.
inline CertificateReport run_model_certificates(const Model& model,
                                                const TargetNets& targets,
                                                const RawSeries& series,
                                                std::size_t max_steps = 64,
                                                std::size_t stride = 0) {
  const NetConfig& net = model.cfg;
  if (net.codebook_bypass) {
    throw DataError(
        "model certificates need code distributions; this model bypasses the "
        "codebook");
  }
  std::size_t w = net.window_len();
  std::vector<WindowPair> pairs =
      make_window_pairs(series, w, stride == 0 ? w : stride);
  std::size_t steps = std::min(max_steps, pairs.size());
  if (steps < 2) throw DataError("model certificates need at least two steps");
  std::size_t last = net.n_patches - 1;

  auto codes = [&] {
    std::vector<std::vector<double>> rows(net.codebook_size);
    const auto& pv = model.codebook.prototypes.values();
    for (std::size_t r = 0; r < net.codebook_size; ++r) {
      rows[r].assign(pv.begin() + static_cast<std::ptrdiff_t>(r * net.embed_dim),
                     pv.begin() +
                         static_cast<std::ptrdiff_t>((r + 1) * net.embed_dim));
    }
    return rows;
  }();

  CertificateRow lip, pin, stab;
  bool lip_s = false, pin_s = false, stab_s = false;
  std::vector<std::vector<double>> pooled;

  {
    NoGradGuard ng;
    ForwardCtx ctx;
    for (std::size_t v = 0; v < series.v; ++v) {
      std::vector<std::vector<double>> preds, refs;
      for (std::size_t i = 0; i < steps; ++i) {
        std::size_t start = pairs[i].start;
        Tensor h = detail::encode_window(model, net, series, start, v, ctx,
                                         false, targets);
        Tensor p = soft_assign(model.codebook, h);
        for (std::size_t r = 0; r < net.n_patches; ++r) {
          pooled.push_back(detail::dist_row(p, r));
        }
        FinePrediction fp = model.fine(p, ctx);
        preds.push_back(detail::dist_row(fp.dist, last));

        Tensor ht = detail::encode_window(model, net, series, start + w, v,
                                          ctx, true, targets);
        Tensor pt = soft_assign(targets.codebook, ht);
        refs.push_back(detail::dist_row(pt, last));
      }
      for (std::size_t t = 0; t + 1 < refs.size(); ++t) {
        detail::keep_tightest(lip, lip_s,
                              check_lipschitz(refs[t], refs[t + 1], codes));
        detail::keep_tightest(pin, pin_s, check_pinsker(refs[t], refs[t + 1]));
      }
      detail::keep_tightest(stab, stab_s,
                            check_stability_sequence(preds, refs, codes));
    }
  }

  lip.name = "model-lipschitz";
  pin.name = "model-pinsker";
  stab.name = "model-stability";

  CertificateReport rep;
  rep.rows.push_back(lip);
  rep.rows.push_back(pin);
  rep.rows.push_back(stab);

  double eta = 0.0;
  {
    std::size_t k = net.codebook_size;
    std::vector<double> mean(k, 0.0);
    for (const auto& row : pooled) {
      for (std::size_t j = 0; j < k; ++j) mean[j] += row[j];
    }
    for (double& x : mean) x /= static_cast<double>(pooled.size());
    eta = entropy(mean);
  }
  if (eta > 0.0) {
    TwoActiveCodes two = check_two_active_codes(pooled, eta);
    two.max_mass.name = "model-two-active-max-mass";
    two.runner_mass.name = "model-two-active-runner-mass";
    rep.rows.push_back(two.max_mass);
    rep.rows.push_back(two.runner_mass);
  }
  FreqTransfer ft = check_freq_transfer(pooled);
  ft.l1_row.name = "model-freq-transfer-l1";
  ft.coord_row.name = "model-freq-transfer-coord";
  rep.rows.push_back(ft.l1_row);
  rep.rows.push_back(ft.coord_row);
  CertificateRow vrow =
      check_variance_lower_bound(measure_non_collapse(pooled, codes));
  vrow.name = "model-variance-floor";
  rep.rows.push_back(vrow);
  return rep;
}

}  // namespace mtsjepa
