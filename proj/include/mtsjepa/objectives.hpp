#pragma once

// Loss terms and the composite objective. Component terms are scalar graph
// nodes summed over patches; the trainer accumulates them over the batch and
// divides by the batch size before combining.

#include "mtsjepa/codebook.hpp"
#include "mtsjepa/data.hpp"
#include "mtsjepa/tensor.hpp"

namespace mtsjepa {

struct LossWeights {
  double lambda_f = 1.0;        // fine predictive branch
  double lambda_c = 0.5;        // coarse predictive branch
  double gamma = 0.1;           // latent MSE inside the fine branch
  double lambda_emb = 1.0;      // feature-to-embedding alignment
  double lambda_com = 0.25;     // prototype commitment
  double lambda_ent_sample = 0.005;
  double lambda_ent_batch = 0.01;
  double lambda_r_start = 0.5;  // reconstruction anneal endpoints
  double lambda_r_end = 0.1;
  double kl_scale = 1.0;        // ablation hook: scales both KL terms
};

// Linear interpolation over the epoch range. `epoch` is 1-based: epoch 1
// gets the start value, epoch == max_epochs the end value.
inline double recon_weight(const LossWeights& w, std::size_t epoch,
                           std::size_t max_epochs) {
  if (max_epochs <= 1 || epoch < 1) return w.lambda_r_start;
  double t = static_cast<double>(epoch - 1) /
             static_cast<double>(max_epochs - 1);
  return w.lambda_r_start + (w.lambda_r_end - w.lambda_r_start) * t;
}

// D_KL(target || prediction), summed over all rows. Probabilities are
// floored at 1e-12 inside the logs; a hard zero in `p` contributes exactly 0.
inline Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) {
    throw ShapeError("kl_divergence: shape mismatch");
  }
  return sum_all(
      mul(p, sub(log(clamp_min(p, 1e-12)), log(clamp_min(q, 1e-12)))));
}

inline Tensor latent_mse(const Tensor& target, const Tensor& pred) {
  if (target.shape() != pred.shape()) {
    throw ShapeError("latent_mse: shape mismatch");
  }
  return sum_all(square(sub(target, pred)));
}

// Squared error against the raw window, measured after undoing the instance
// normalization of the decoder output.
inline Tensor reconstruction_loss(const Tensor& xhat, const RevinStats& st,
                                  const Tensor& raw) {
  if (xhat.shape() != raw.shape()) {
    throw ShapeError("reconstruction_loss: shape mismatch");
  }
  Tensor denorm = add_const(scale(xhat, st.std_eps), st.mean);
  return sum_all(square(sub(denorm, raw)));
}

// Component scalars, already reduced over the batch: every slot except
// `ent_batch` is the batch mean of per-unit patch sums, while `ent_batch` is
// the entropy of the batch-mean assignment and has no per-unit form. Under
// the codebook bypass the two KL slots carry the fine/coarse latent MSE
// instead and `mse_fine` stays zero.
struct LossTerms {
  Tensor kl_fine;
  Tensor mse_fine;
  Tensor kl_coarse;
  Tensor emb;
  Tensor com;
  Tensor ent_sample;
  Tensor ent_batch;
  Tensor rec;
};

inline LossTerms zero_loss_terms() {
  LossTerms t;
  t.kl_fine = Tensor::scalar(0.0);
  t.mse_fine = Tensor::scalar(0.0);
  t.kl_coarse = Tensor::scalar(0.0);
  t.emb = Tensor::scalar(0.0);
  t.com = Tensor::scalar(0.0);
  t.ent_sample = Tensor::scalar(0.0);
  t.ent_batch = Tensor::scalar(0.0);
  t.rec = Tensor::scalar(0.0);
  return t;
}

struct LossBreakdown {
  double kl_fine = 0.0;
  double mse_fine = 0.0;
  double kl_coarse = 0.0;
  double emb = 0.0;
  double com = 0.0;
  double ent_sample = 0.0;
  double ent_batch = 0.0;
  double rec = 0.0;
  double total = 0.0;
};

inline Tensor combine_total(const LossTerms& t, const LossWeights& w,
                            double lambda_r) {
  Tensor total = scale(t.kl_fine, w.lambda_f * w.kl_scale);
  total = add(total, scale(t.mse_fine, w.lambda_f * w.gamma));
  total = add(total, scale(t.kl_coarse, w.lambda_c * w.kl_scale));
  total = add(total, scale(t.emb, w.lambda_emb));
  total = add(total, scale(t.com, w.lambda_com));
  total = add(total, scale(t.ent_sample, w.lambda_ent_sample));
  total = add(total, scale(t.ent_batch, -w.lambda_ent_batch));
  total = add(total, scale(t.rec, lambda_r));
  return total;
}

inline LossBreakdown breakdown_from(const LossTerms& t, const LossWeights& w,
                                    double lambda_r) {
  LossBreakdown b;
  b.kl_fine = t.kl_fine.scalar_value();
  b.mse_fine = t.mse_fine.scalar_value();
  b.kl_coarse = t.kl_coarse.scalar_value();
  b.emb = t.emb.scalar_value();
  b.com = t.com.scalar_value();
  b.ent_sample = t.ent_sample.scalar_value();
  b.ent_batch = t.ent_batch.scalar_value();
  b.rec = t.rec.scalar_value();
  b.total = w.lambda_f * w.kl_scale * b.kl_fine +
            w.lambda_f * w.gamma * b.mse_fine +
            w.lambda_c * w.kl_scale * b.kl_coarse + w.lambda_emb * b.emb +
            w.lambda_com * b.com + w.lambda_ent_sample * b.ent_sample -
            w.lambda_ent_batch * b.ent_batch + lambda_r * b.rec;
  return b;
}

}  // namespace mtsjepa
