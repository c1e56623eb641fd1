#pragma once

// Pre-training loop: batched Adam with global-norm clipping, EMA target
// updates after every step, and validation-based model selection.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mtsjepa/data.hpp"
#include "mtsjepa/io.hpp"
#include "mtsjepa/networks.hpp"
#include "mtsjepa/objectives.hpp"
#include "mtsjepa/rng.hpp"
#include "mtsjepa/simplex.hpp"
#include "mtsjepa/stats.hpp"
#include "mtsjepa/tensor.hpp"

namespace mtsjepa {

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamConfig {
  double lr = 5e-4;
  double weight_decay = 1e-5;  // classic L2, added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

inline AdamState make_adam_state(const ParamRegistry& reg) {
  AdamState st;
  st.m.reserve(reg.entries.size());
  st.v.reserve(reg.entries.size());
  for (const auto& [name, tensor] : reg.entries) {
    (void)name;
    st.m.emplace_back(tensor.values().size(), 0.0);
    st.v.emplace_back(tensor.values().size(), 0.0);
  }
  return st;
}

inline double global_grad_norm(const ParamRegistry& reg) {
  double ss = 0.0;
  for (const auto& [name, tensor] : reg.entries) {
    for (double g : tensor.grad_values()) {
      if (!std::isfinite(g)) {
        throw NumericError("gradient not finite in " + name);
      }
      ss += g * g;
    }
  }
  return std::sqrt(ss);
}

// Scales all gradients so the global norm is at most max_norm. Returns the
// pre-clip norm.
inline double clip_global_norm(ParamRegistry& reg, double max_norm) {
  double norm = global_grad_norm(reg);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (auto& [name, tensor] : reg.entries) {
      (void)name;
      for (double& g : tensor.grad_buffer()) g *= s;
    }
  }
  return norm;
}

// Bias-corrected Adam; weight decay enters the gradient, not the update.
inline void adam_step(ParamRegistry& reg, AdamState& st,
                      const AdamConfig& cfg) {
  if (st.m.size() != reg.entries.size()) {
    throw TensorError("adam_step: moment buffers do not match the registry");
  }
  ++st.t;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t e = 0; e < reg.entries.size(); ++e) {
    Tensor& p = reg.entries[e].second;
    auto& vals = p.mutable_values();
    std::vector<double> grads = p.grad_values();
    auto& m = st.m[e];
    auto& v = st.v[e];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double g = grads[i] + cfg.weight_decay * vals[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      vals[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration and state.

struct TrainConfig {
  NetConfig net;
  LossWeights weights;
  AdamConfig adam;
  double clip_norm = 0.5;
  double ema_rho = 0.996;
  std::size_t batch_size = 128;   // window-variable units
  std::size_t max_epochs = 100;
  std::size_t selection_start_epoch = 50;
  std::size_t patience = 10;
  double val_fraction = 0.1;      // chronological tail of the pair list
  std::size_t window_stride = 100;
  std::uint64_t seed = 0;
};

// One training unit: a (window pair, variable) combination. Variables fold
// into the batch axis, so each unit is a univariate window pair.
struct TrainUnit {
  std::size_t pair_idx = 0;
  std::size_t var_idx = 0;
};

struct PreparedData {
  RawSeries series;                          // constant channels removed
  std::vector<std::size_t> removed_channels;  // original indices
  std::vector<WindowPair> pairs;
  std::vector<TrainUnit> train_units, val_units;
};

inline PreparedData prepare_training_data(const RawSeries& raw,
                                          const TrainConfig& cfg) {
  PreparedData data;
  std::size_t w = cfg.net.window_len();
  data.pairs = make_window_pairs(raw, w, cfg.window_stride);

  std::size_t n = data.pairs.size();
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * cfg.val_fraction));
  if (n_val == 0) n_val = 1;
  if (n_val >= n) {
    throw DataError("prepare_training_data: not enough window pairs to split");
  }
  std::size_t n_train = n - n_val;

  std::size_t train_rows = data.pairs[n_train - 1].start + 2 * w;
  data.removed_channels = constant_channel_indices(raw, train_rows);
  data.series = apply_channel_mask(raw, data.removed_channels);

  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t v = 0; v < data.series.v; ++v) {
      if (p < n_train) {
        data.train_units.push_back({p, v});
      } else {
        data.val_units.push_back({p, v});
      }
    }
  }
  return data;
}

struct TrainerState {
  TrainConfig cfg;
  Model model;
  TargetNets targets;
  AdamState adam;
  Rng rng{0};
  std::size_t epoch = 0;  // last completed epoch, 1-based
};

inline TrainerState make_trainer(const TrainConfig& cfg) {
  TrainerState st;
  st.cfg = cfg;
  st.rng = Rng(cfg.seed);
  st.model = build_model(cfg.net, st.rng);
  st.targets = build_target_nets(cfg.net);
  copy_into_targets(st.model, st.targets);
  st.adam = make_adam_state(st.model.reg);
  return st;
}

// ---------------------------------------------------------------------------
// Batch forward pass shared by training, validation, and tests.

struct BatchGraph {
  LossTerms terms;
  Tensor total;
  LossBreakdown breakdown;
};

inline BatchGraph batch_forward(const Model& model, const TargetNets& targets,
                                const PreparedData& data,
                                const std::vector<TrainUnit>& batch,
                                const LossWeights& weights, double lambda_r,
                                ForwardCtx& ctx) {
  if (batch.empty()) throw DataError("batch_forward: empty batch");
  const NetConfig& net = model.cfg;
  std::size_t w = net.window_len();
  bool bypass = net.codebook_bypass;
  double bn = static_cast<double>(batch.size());

  Tensor kl_fine_acc = Tensor::scalar(0.0);
  Tensor mse_fine_acc = Tensor::scalar(0.0);
  Tensor kl_coarse_acc = Tensor::scalar(0.0);
  Tensor emb_acc = Tensor::scalar(0.0);
  Tensor com_acc = Tensor::scalar(0.0);
  Tensor rec_acc = Tensor::scalar(0.0);
  Tensor ent_row_acc = Tensor::scalar(0.0);
  Tensor assign_sum = Tensor::zeros({net.codebook_size});

  ForwardCtx eval_ctx;  // teacher branch always runs dropout-off

  for (const TrainUnit& u : batch) {
    const WindowPair& pr = data.pairs[u.pair_idx];
    std::vector<double> raw_ctx =
        window_channel(data.series, pr.start, w, u.var_idx);
    RevinStats st_ctx = revin_fit(raw_ctx.data(), raw_ctx.size());
    std::vector<double> norm_ctx(w);
    revin_normalize(raw_ctx.data(), w, st_ctx, norm_ctx.data());
    Tensor fine_t =
        Tensor::from_values({net.n_patches, net.patch_len},
                            patchify(norm_ctx, net.n_patches, net.patch_len));

    Tensor h = model.encoder(fine_t, ctx);
    Tensor pred_input, z;
    if (bypass) {
      pred_input = h;
      z = h;
    } else {
      Tensor p = soft_assign(model.codebook, h);
      pred_input = p;
      z = expected_embedding(model.codebook, p);
      AlignmentLosses align = codebook_alignment_losses(model.codebook, h, p);
      emb_acc = add(emb_acc, align.embed);
      com_acc = add(com_acc, align.commit);
      Tensor logp = log(clamp_min(p, 1e-12));
      ent_row_acc = add(ent_row_acc, neg(sum_all(mul(p, logp))));
      assign_sum = add(assign_sum, sum_axis(p, 0));
    }

    Tensor xhat = model.decoder(z);
    Tensor raw_t = Tensor::from_values(
        {net.n_patches, net.patch_len},
        patchify(raw_ctx, net.n_patches, net.patch_len));
    rec_acc = add(rec_acc, reconstruction_loss(xhat, st_ctx, raw_t));

    FinePrediction fp = model.fine(pred_input, ctx);
    Tensor cp = model.coarse(pred_input, ctx);

    Tensor tgt_fine_dist, tgt_fine_lat, tgt_coarse;
    {
      NoGradGuard ng;
      std::vector<double> raw_next =
          window_channel(data.series, pr.start + w, w, u.var_idx);
      RevinStats st_next = revin_fit(raw_next.data(), raw_next.size());
      std::vector<double> norm_next(w);
      revin_normalize(raw_next.data(), w, st_next, norm_next.data());
      Tensor fine_next = Tensor::from_values(
          {net.n_patches, net.patch_len},
          patchify(norm_next, net.n_patches, net.patch_len));
      Tensor coarse_next = Tensor::from_values(
          {1, net.patch_len}, down_avg(norm_next, net.n_patches));

      Tensor ht = targets.encoder(fine_next, eval_ctx);
      Tensor hc = targets.encoder(coarse_next, eval_ctx);
      if (bypass) {
        tgt_fine_lat = stop_gradient(ht);
        tgt_coarse = stop_gradient(hc);
      } else {
        Tensor pt = soft_assign(targets.codebook, ht);
        tgt_fine_dist = stop_gradient(pt);
        tgt_fine_lat =
            stop_gradient(expected_embedding(targets.codebook, pt));
        tgt_coarse = stop_gradient(soft_assign(targets.codebook, hc));
      }
    }

    if (bypass) {
      kl_fine_acc = add(kl_fine_acc, latent_mse(tgt_fine_lat, fp.latent));
      kl_coarse_acc = add(kl_coarse_acc, latent_mse(tgt_coarse, cp));
    } else {
      kl_fine_acc = add(kl_fine_acc, kl_divergence(tgt_fine_dist, fp.dist));
      mse_fine_acc = add(mse_fine_acc, latent_mse(tgt_fine_lat, fp.latent));
      kl_coarse_acc = add(kl_coarse_acc, kl_divergence(tgt_coarse, cp));
    }
  }

  BatchGraph out;
  out.terms.kl_fine = scale(kl_fine_acc, 1.0 / bn);
  out.terms.mse_fine = scale(mse_fine_acc, 1.0 / bn);
  out.terms.kl_coarse = scale(kl_coarse_acc, 1.0 / bn);
  out.terms.emb = scale(emb_acc, 1.0 / bn);
  out.terms.com = scale(com_acc, 1.0 / bn);
  out.terms.rec = scale(rec_acc, 1.0 / bn);
  if (bypass) {
    out.terms.ent_sample = Tensor::scalar(0.0);
    out.terms.ent_batch = Tensor::scalar(0.0);
  } else {
    double rows = bn * static_cast<double>(net.n_patches);
    out.terms.ent_sample = scale(ent_row_acc, 1.0 / rows);
    Tensor mean_p = scale(assign_sum, 1.0 / rows);
    out.terms.ent_batch =
        neg(sum_all(mul(mean_p, log(clamp_min(mean_p, 1e-12)))));
  }
  out.total = combine_total(out.terms, weights, lambda_r);
  out.breakdown = breakdown_from(out.terms, weights, lambda_r);

  auto check = [](double x, const char* what) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite loss component: ") + what);
    }
  };
  check(out.breakdown.kl_fine, "kl_fine");
  check(out.breakdown.mse_fine, "mse_fine");
  check(out.breakdown.kl_coarse, "kl_coarse");
  check(out.breakdown.emb, "emb");
  check(out.breakdown.com, "com");
  check(out.breakdown.ent_sample, "ent_sample");
  check(out.breakdown.ent_batch, "ent_batch");
  check(out.breakdown.rec, "rec");
  check(out.breakdown.total, "total");
  return out;
}

// ---------------------------------------------------------------------------
// One optimization step. Order: online forward + losses, backward, clip raw
// gradients, Adam (adds weight decay), then the EMA update of the shadows.

struct StepOutput {
  LossBreakdown breakdown;
  double grad_norm = 0.0;  // before clipping
};

inline StepOutput train_step(TrainerState& st, const PreparedData& data,
                             const std::vector<TrainUnit>& batch,
                             double lambda_r) {
  st.model.reg.zero_grads();
  ForwardCtx ctx;
  ctx.training = true;
  ctx.dropout = st.cfg.net.dropout;
  ctx.rng = &st.rng;

  BatchGraph g = batch_forward(st.model, st.targets, data, batch,
                               st.cfg.weights, lambda_r, ctx);
  GradTape::active().backward(g.total);
  GradTape::active().clear();

  StepOutput out;
  out.breakdown = g.breakdown;
  out.grad_norm = clip_global_norm(st.model.reg, st.cfg.clip_norm);
  adam_step(st.model.reg, st.adam, st.cfg.adam);
  ema_update_targets(st.model, st.targets, st.cfg.ema_rho);
  st.model.reg.zero_grads();
  return out;
}

inline LossBreakdown validation_loss(const TrainerState& st,
                                     const PreparedData& data,
                                     double lambda_r) {
  NoGradGuard ng;
  ForwardCtx eval_ctx;
  BatchGraph g = batch_forward(st.model, st.targets, data, data.val_units,
                               st.cfg.weights, lambda_r, eval_ctx);
  return g.breakdown;
}

// ---------------------------------------------------------------------------
// Model selection.

struct SelectionState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t bad = 0;
};

// Feed one per-epoch validation loss; returns true when training should stop.
// Selection only considers epochs >= selection_start (1-based).
inline bool update_selection(SelectionState& s, std::size_t epoch,
                             std::size_t selection_start, std::size_t patience,
                             double val) {
  if (epoch < selection_start) return false;
  if (val < s.best) {
    s.best = val;
    s.best_epoch = epoch;
    s.bad = 0;
    return false;
  }
  ++s.bad;
  return s.bad >= patience;
}

// ---------------------------------------------------------------------------
// Training log.

struct LogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // 1-based within the epoch
  LossBreakdown b;
  bool has_val = false;
  double val_total = 0.0;
};

inline std::string training_log_csv(const std::vector<LogRow>& rows) {
  std::string out =
      "epoch,step,kl_fine,mse_fine,kl_coarse,emb,com,ent_sample,ent_batch,"
      "rec,total,val_total\n";
  for (const LogRow& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + ",";
    out += format_double(r.b.kl_fine) + "," + format_double(r.b.mse_fine) +
           "," + format_double(r.b.kl_coarse) + "," + format_double(r.b.emb) +
           "," + format_double(r.b.com) + "," +
           format_double(r.b.ent_sample) + "," +
           format_double(r.b.ent_batch) + "," + format_double(r.b.rec) + "," +
           format_double(r.b.total) + ",";
    if (r.has_val) out += format_double(r.val_total);
    out += "\n";
  }
  return out;
}

inline double epoch_mean_total(const std::vector<LogRow>& rows,
                               std::size_t epoch) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const LogRow& r : rows) {
    if (r.epoch == epoch) {
      acc += r.b.total;
      ++n;
    }
  }
  if (n == 0) throw DataError("epoch_mean_total: no rows for epoch");
  return acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Snapshot/restore for best-epoch selection and checkpointing.

struct StateSnapshot {
  std::vector<std::vector<double>> online, shadows;
  AdamState adam;
  std::uint64_t rng_state = 0;
  std::size_t epoch = 0;
};

inline StateSnapshot snapshot_state(const TrainerState& st) {
  StateSnapshot s;
  for (const auto& [name, t] : st.model.reg.entries) {
    (void)name;
    s.online.push_back(t.values());
  }
  for (const auto& [name, t] : st.targets.reg.entries) {
    (void)name;
    s.shadows.push_back(t.values());
  }
  s.adam = st.adam;
  s.rng_state = st.rng.state();
  s.epoch = st.epoch;
  return s;
}

inline void restore_state(TrainerState& st, const StateSnapshot& s) {
  if (s.online.size() != st.model.reg.entries.size() ||
      s.shadows.size() != st.targets.reg.entries.size()) {
    throw TensorError("restore_state: snapshot does not match the model");
  }
  for (std::size_t i = 0; i < s.online.size(); ++i) {
    st.model.reg.entries[i].second.mutable_values() = s.online[i];
  }
  for (std::size_t i = 0; i < s.shadows.size(); ++i) {
    st.targets.reg.entries[i].second.mutable_values() = s.shadows[i];
  }
  st.adam = s.adam;
  st.rng.set_state(s.rng_state);
  st.epoch = s.epoch;
}

// ---------------------------------------------------------------------------
// Full fit loop. Epochs are 1-based; the final state is the best-validation
// snapshot once selection has activated, otherwise the last epoch.

struct FitResult {
  TrainerState state;
  std::vector<LogRow> log;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

inline FitResult fit(const TrainConfig& cfg, const PreparedData& data) {
  if (data.train_units.empty() || data.val_units.empty()) {
    throw DataError("fit: empty train or validation split");
  }
  FitResult res;
  res.state = make_trainer(cfg);
  TrainerState& st = res.state;

  SelectionState sel;
  StateSnapshot best;
  bool have_best = false;

  std::vector<std::size_t> order(data.train_units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double lambda_r = recon_weight(cfg.weights, epoch, cfg.max_epochs);
    st.rng.shuffle(order);

    std::size_t step = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      std::size_t end = std::min(off + cfg.batch_size, order.size());
      std::vector<TrainUnit> batch;
      batch.reserve(end - off);
      for (std::size_t i = off; i < end; ++i) {
        batch.push_back(data.train_units[order[i]]);
      }
      StepOutput so = train_step(st, data, batch, lambda_r);
      LogRow row;
      row.epoch = epoch;
      row.step = ++step;
      row.b = so.breakdown;
      res.log.push_back(row);
    }

    st.epoch = epoch;
    double val = validation_loss(st, data, lambda_r).total;
    res.log.back().has_val = true;
    res.log.back().val_total = val;
    res.epochs_run = epoch;

    double was_best = sel.best;
    bool stop = update_selection(sel, epoch, cfg.selection_start_epoch,
                                 cfg.patience, val);
    if (epoch >= cfg.selection_start_epoch && sel.best_epoch == epoch &&
        sel.best < was_best) {
      best = snapshot_state(st);
      have_best = true;
    }
    if (stop) break;
  }

  if (have_best) {
    restore_state(st, best);
    res.best_val = sel.best;
    res.best_epoch = sel.best_epoch;
  } else {
    res.best_val = res.log.back().has_val ? res.log.back().val_total : 0.0;
    res.best_epoch = res.epochs_run;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Collapse diagnostics over a set of units: embedding spread, assignment
// entropy, and dominant-code usage.

struct CollapseDiagnostics {
  double trace_cov = 0.0;      // over soft embeddings (features when bypassed)
  double batch_entropy = 0.0;  // H of the mean assignment; 0 when bypassed
  std::vector<double> usage;   // dominant-code frequencies, sums to 1
};

inline CollapseDiagnostics collapse_monitor(const Model& model,
                                            const PreparedData& data,
                                            const std::vector<TrainUnit>& units) {
  if (units.empty()) throw DataError("collapse_monitor: no units");
  NoGradGuard ng;
  ForwardCtx eval_ctx;
  const NetConfig& net = model.cfg;
  std::size_t w = net.window_len();
  bool bypass = net.codebook_bypass;

  CollapseDiagnostics diag;
  std::vector<std::vector<double>> zrows;
  std::vector<double> psum(bypass ? 0 : net.codebook_size, 0.0);
  std::vector<std::size_t> counts(bypass ? 0 : net.codebook_size, 0);
  std::size_t n_rows = 0;

  for (const TrainUnit& u : units) {
    const WindowPair& pr = data.pairs[u.pair_idx];
    std::vector<double> raw_ctx =
        window_channel(data.series, pr.start, w, u.var_idx);
    RevinStats rs = revin_fit(raw_ctx.data(), raw_ctx.size());
    std::vector<double> norm_ctx(w);
    revin_normalize(raw_ctx.data(), w, rs, norm_ctx.data());
    Tensor fine_t =
        Tensor::from_values({net.n_patches, net.patch_len},
                            patchify(norm_ctx, net.n_patches, net.patch_len));
    Tensor h = model.encoder(fine_t, eval_ctx);
    Tensor zt = h;
    if (!bypass) {
      Tensor p = soft_assign(model.codebook, h);
      zt = expected_embedding(model.codebook, p);
      const auto& pv = p.values();
      std::size_t k = net.codebook_size;
      for (std::size_t r = 0; r < net.n_patches; ++r) {
        for (std::size_t c = 0; c < k; ++c) psum[c] += pv[r * k + c];
        ++counts[dominant_index(pv.data() + r * k, k)];
      }
    }
    const auto& zv = zt.values();
    std::size_t d = zt.shape()[1];
    for (std::size_t r = 0; r < net.n_patches; ++r) {
      zrows.emplace_back(zv.begin() + static_cast<long>(r * d),
                         zv.begin() + static_cast<long>((r + 1) * d));
    }
    n_rows += net.n_patches;
  }

  diag.trace_cov = trace_cov(zrows);
  if (!bypass) {
    for (double& x : psum) x /= static_cast<double>(n_rows);
    diag.batch_entropy = entropy(psum);
    diag.usage.assign(counts.size(), 0.0);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      diag.usage[c] =
          static_cast<double>(counts[c]) / static_cast<double>(n_rows);
    }
  }
  return diag;
}

}  // namespace mtsjepa
