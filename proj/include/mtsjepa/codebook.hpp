#pragma once

// Soft codebook bottleneck: cosine-similarity assignment distributions at a
// fixed temperature, expected embeddings inside the prototype convex hull,
// alignment losses with one-sided gradient routing, and entropy statistics.

#include <cmath>
#include <vector>

#include "mtsjepa/rng.hpp"
#include "mtsjepa/tensor.hpp"

namespace mtsjepa {

struct Codebook {
  Tensor prototypes;  // [K, D]
  double temperature = 0.1;

  std::size_t k() const { return prototypes.shape()[0]; }
  std::size_t d() const { return prototypes.shape()[1]; }

  // Largest prototype norm; every expected embedding lies within this radius.
  double radius() const {
    double m = 0.0;
    for (std::size_t i = 0; i < k(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d(); ++j) {
        double x = prototypes.at(i, j);
        s += x * x;
      }
      m = std::max(m, std::sqrt(s));
    }
    return m;
  }
};

inline Codebook make_codebook(std::size_t k, std::size_t d, double temperature,
                              Rng& rng, bool trainable = true) {
  if (k < 2) throw TensorError("codebook needs at least two prototypes");
  if (temperature <= 0.0) throw TensorError("codebook temperature must be > 0");
  std::vector<double> v(k * d);
  double std = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& x : v) x = rng.normal(0.0, std);
  Codebook cb;
  cb.prototypes = trainable ? Tensor::param({k, d}, std::move(v))
                            : Tensor::from_values({k, d}, std::move(v));
  cb.temperature = temperature;
  return cb;
}

// p = softmax_k(<h_bar, c_bar_k> / tau) for each feature row.
inline Tensor soft_assign(const Codebook& cb, const Tensor& h) {
  Tensor h_bar = l2_normalize_rows(h);
  Tensor c_bar = l2_normalize_rows(cb.prototypes);
  Tensor sims = matmul(h_bar, transpose(c_bar));  // [n, K]
  return softmax(sims, 1, cb.temperature);
}

// z = C^T p per row; linear in p, so ||z(p) - z(q)|| <= radius * ||p - q||_1.
inline Tensor expected_embedding(const Codebook& cb, const Tensor& p) {
  return matmul(p, cb.prototypes);
}

struct AlignmentLosses {
  Tensor embed;   // pulls features toward the (frozen) expected embeddings
  Tensor commit;  // pulls prototypes toward the (frozen) features
};

// Values equal sum_i ||z_i - h_i||^2 on both sides; gradients are one-sided:
// `embed` reaches only the feature rows, `commit` only the prototypes (the
// assignment weights are frozen inside the commit term).
inline AlignmentLosses codebook_alignment_losses(const Codebook& cb,
                                                 const Tensor& h,
                                                 const Tensor& p) {
  Tensor z_frozen = stop_gradient(expected_embedding(cb, p));
  Tensor l_emb = sum_all(square(sub(z_frozen, h)));
  Tensor z_commit = matmul(stop_gradient(p), cb.prototypes);
  Tensor l_com = sum_all(square(sub(z_commit, stop_gradient(h))));
  return {l_emb, l_com};
}

struct CodeEntropies {
  Tensor sample;  // mean over rows of H(p_i)
  Tensor batch;   // H of the row-mean distribution
};

inline CodeEntropies code_entropies(const Tensor& p) {
  Tensor logp = log(clamp_min(p, 1e-12));
  Tensor per_row = neg(sum_axis(mul(p, logp), 1));  // [n]
  Tensor sample = mean_all(per_row);
  Tensor p_bar = mean_axis(p, 0);  // [K]
  Tensor batch = neg(sum_all(mul(p_bar, log(clamp_min(p_bar, 1e-12)))));
  return {sample, batch};
}

// shadow <- rho * shadow + (1 - rho) * online, elementwise on raw values.
inline void ema_update(Tensor& shadow, const Tensor& online, double rho) {
  if (rho < 0.0 || rho >= 1.0) {
    throw TensorError("ema_update: decay must lie in [0, 1)");
  }
  if (shadow.shape() != online.shape()) {
    throw ShapeError("ema_update: shape mismatch");
  }
  auto& s = shadow.mutable_values();
  const auto& o = online.values();
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rho * s[i] + (1.0 - rho) * o[i];
  }
}

}  // namespace mtsjepa
