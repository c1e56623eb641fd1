#pragma once

// Network modules: patch tokenizer with residual blocks, pre-norm
// transformer encoder shared by both temporal views, distribution-sequence
// predictors (self-attention for the fine branch, a learnable query with
// cross-attention for the coarse branch), and the patch decoder.
// Every parameter is registered in creation order under a stable name, which
// fixes the serialization layout and the EMA shadow pairing.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mtsjepa/codebook.hpp"
#include "mtsjepa/rng.hpp"
#include "mtsjepa/tensor.hpp"

namespace mtsjepa {

struct NetConfig {
  std::size_t n_patches = 5;
  std::size_t patch_len = 20;
  std::size_t embed_dim = 64;
  std::size_t enc_layers = 2;
  std::size_t enc_heads = 4;
  std::size_t ff_mult = 4;
  std::size_t tok_hidden1 = 128;
  std::size_t tok_hidden2 = 128;
  std::size_t codebook_size = 32;
  double temperature = 0.1;
  std::size_t pred_width = 64;
  std::size_t pred_layers = 2;
  std::size_t pred_heads = 4;
  std::size_t dec_hidden = 128;
  std::size_t max_positions = 64;
  double dropout = 0.1;
  bool codebook_bypass = false;

  std::size_t window_len() const { return n_patches * patch_len; }
};

struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> entries;
  bool trainable = true;

  Tensor add(const std::string& name, Shape shape, std::vector<double> vals) {
    Tensor t = trainable ? Tensor::param(std::move(shape), std::move(vals))
                         : Tensor::from_values(std::move(shape), std::move(vals));
    entries.emplace_back(name, t);
    return t;
  }

  Tensor normal(const std::string& name, Shape shape, double std, Rng& rng) {
    std::vector<double> v(detail::shape_size(shape));
    for (double& x : v) x = rng.normal(0.0, std);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor constant(const std::string& name, Shape shape, double value) {
    std::vector<double> v(detail::shape_size(shape), value);
    return add(name, std::move(shape), std::move(v));
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : entries) t.zero_grad();
  }
};

struct ForwardCtx {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

inline Tensor apply_dropout(const Tensor& x, const ForwardCtx& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0) return x;
  double keep = 1.0 - ctx.dropout;
  std::vector<double> mask(x.size());
  for (double& m : mask) m = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from_values(x.shape(), std::move(mask)));
}

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

inline Linear make_linear(ParamRegistry& reg, const std::string& name,
                          std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.w = reg.normal(name + ".w", {in, out},
                   1.0 / std::sqrt(static_cast<double>(in)), rng);
  l.b = reg.constant(name + ".b", {out}, 0.0);
  return l;
}

// Layer norm with learnable gain and bias.
struct Norm {
  Tensor g, b;
  Tensor operator()(const Tensor& x) const {
    return add(mul(layer_norm(x), g), b);
  }
};

inline Norm make_norm(ParamRegistry& reg, const std::string& name,
                      std::size_t dim) {
  Norm n;
  n.g = reg.constant(name + ".g", {dim}, 1.0);
  n.b = reg.constant(name + ".b", {dim}, 0.0);
  return n;
}

// norm -> pointwise MLP -> residual add.
struct ResidualBlock {
  Norm norm;
  Linear fc1, fc2;
  Tensor operator()(const Tensor& x, const ForwardCtx& ctx) const {
    Tensor h = fc2(gelu(fc1(norm(x))));
    return add(x, apply_dropout(h, ctx));
  }
};

inline ResidualBlock make_residual_block(ParamRegistry& reg,
                                         const std::string& name,
                                         std::size_t dim, std::size_t hidden,
                                         Rng& rng) {
  ResidualBlock b;
  b.norm = make_norm(reg, name + ".norm", dim);
  b.fc1 = make_linear(reg, name + ".fc1", dim, hidden, rng);
  b.fc2 = make_linear(reg, name + ".fc2", hidden, dim, rng);
  return b;
}

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t heads = 1;

  Tensor operator()(const Tensor& q_in, const Tensor& kv_in,
                    const ForwardCtx& ctx) const {
    Tensor q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
    std::size_t width = q.shape()[1];
    std::size_t dh = width / heads;
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      outs.push_back(scaled_dot_product_attention(
          slice(q, 1, h * dh, dh), slice(k, 1, h * dh, dh),
          slice(v, 1, h * dh, dh)));
    }
    Tensor cat = heads == 1 ? outs[0] : concat(outs, 1);
    return apply_dropout(wo(cat), ctx);
  }
};

inline MultiHeadAttention make_attention(ParamRegistry& reg,
                                         const std::string& name,
                                         std::size_t width, std::size_t heads,
                                         Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw TensorError("attention width must be divisible by head count");
  }
  MultiHeadAttention a;
  a.wq = make_linear(reg, name + ".wq", width, width, rng);
  a.wk = make_linear(reg, name + ".wk", width, width, rng);
  a.wv = make_linear(reg, name + ".wv", width, width, rng);
  a.wo = make_linear(reg, name + ".wo", width, width, rng);
  a.heads = heads;
  return a;
}

// Pre-norm self-attention block.
struct TransformerBlock {
  Norm ln1, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  Tensor operator()(Tensor x, const ForwardCtx& ctx) const {
    Tensor a = ln1(x);
    x = add(x, attn(a, a, ctx));
    Tensor h = fc2(gelu(fc1(ln2(x))));
    return add(x, apply_dropout(h, ctx));
  }
};

inline TransformerBlock make_transformer_block(ParamRegistry& reg,
                                               const std::string& name,
                                               std::size_t width,
                                               std::size_t heads,
                                               std::size_t ff, Rng& rng) {
  TransformerBlock b;
  b.ln1 = make_norm(reg, name + ".ln1", width);
  b.attn = make_attention(reg, name + ".attn", width, heads, rng);
  b.ln2 = make_norm(reg, name + ".ln2", width);
  b.fc1 = make_linear(reg, name + ".fc1", width, ff, rng);
  b.fc2 = make_linear(reg, name + ".fc2", ff, width, rng);
  return b;
}

// Pre-norm cross-attention block; the query rows attend to the key/value
// rows and only the query stream is updated.
struct CrossBlock {
  Norm lnq, lnkv, ln2;
  MultiHeadAttention attn;
  Linear fc1, fc2;

  Tensor operator()(Tensor q, const Tensor& kv, const ForwardCtx& ctx) const {
    q = add(q, attn(lnq(q), lnkv(kv), ctx));
    Tensor h = fc2(gelu(fc1(ln2(q))));
    return add(q, apply_dropout(h, ctx));
  }
};

inline CrossBlock make_cross_block(ParamRegistry& reg, const std::string& name,
                                   std::size_t width, std::size_t heads,
                                   std::size_t ff, Rng& rng) {
  CrossBlock b;
  b.lnq = make_norm(reg, name + ".lnq", width);
  b.lnkv = make_norm(reg, name + ".lnkv", width);
  b.attn = make_attention(reg, name + ".attn", width, heads, rng);
  b.ln2 = make_norm(reg, name + ".ln2", width);
  b.fc1 = make_linear(reg, name + ".fc1", width, ff, rng);
  b.fc2 = make_linear(reg, name + ".fc2", ff, width, rng);
  return b;
}

// Shared encoder: rows of patch values (fine view: P rows of length L,
// coarse view: one row) -> one feature row per input row.
struct Encoder {
  Linear tok;
  ResidualBlock rb1, rb2;
  Tensor pos;  // [max_positions, embed_dim]
  std::vector<TransformerBlock> blocks;
  Norm ln_f;

  Tensor operator()(const Tensor& rows, const ForwardCtx& ctx) const {
    std::size_t n = rows.shape()[0];
    if (n > pos.shape()[0]) {
      throw ShapeError("encoder input exceeds the positional table");
    }
    Tensor x = tok(rows);
    x = rb1(x, ctx);
    x = rb2(x, ctx);
    x = add(x, slice(pos, 0, 0, n));
    for (const auto& b : blocks) x = b(x, ctx);
    return ln_f(x);
  }
};

inline Encoder make_encoder(ParamRegistry& reg, const std::string& prefix,
                            const NetConfig& cfg, Rng& rng) {
  Encoder e;
  e.tok = make_linear(reg, prefix + ".tok", cfg.patch_len, cfg.embed_dim, rng);
  e.rb1 = make_residual_block(reg, prefix + ".rb1", cfg.embed_dim,
                              cfg.tok_hidden1, rng);
  e.rb2 = make_residual_block(reg, prefix + ".rb2", cfg.embed_dim,
                              cfg.tok_hidden2, rng);
  e.pos = reg.normal(prefix + ".pos", {cfg.max_positions, cfg.embed_dim}, 0.02,
                     rng);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    e.blocks.push_back(make_transformer_block(
        reg, prefix + ".block" + std::to_string(i), cfg.embed_dim,
        cfg.enc_heads, cfg.embed_dim * cfg.ff_mult, rng));
  }
  e.ln_f = make_norm(reg, prefix + ".ln_f", cfg.embed_dim);
  return e;
}

struct FinePrediction {
  Tensor dist;    // [P, K] simplex rows; undefined under codebook bypass
  Tensor latent;  // [P, D]
};

// Predicts the next fine code sequence from the current one, row-parallel
// self-attention over embedded assignment rows.
struct FinePredictor {
  Linear embed;
  Tensor pos;
  std::vector<TransformerBlock> blocks;
  Norm ln_f;
  Linear head_dist;
  Linear head_latent;
  bool bypass = false;

  FinePrediction operator()(const Tensor& rows, const ForwardCtx& ctx) const {
    std::size_t n = rows.shape()[0];
    Tensor x = embed(rows);
    x = add(x, slice(pos, 0, 0, n));
    for (const auto& b : blocks) x = b(x, ctx);
    x = ln_f(x);
    FinePrediction out;
    if (!bypass) out.dist = softmax(head_dist(x), 1, 1.0);
    out.latent = head_latent(x);
    return out;
  }
};

inline FinePredictor make_fine_predictor(ParamRegistry& reg,
                                         const std::string& prefix,
                                         const NetConfig& cfg, Rng& rng) {
  FinePredictor p;
  p.bypass = cfg.codebook_bypass;
  std::size_t in = p.bypass ? cfg.embed_dim : cfg.codebook_size;
  p.embed = make_linear(reg, prefix + ".embed", in, cfg.pred_width, rng);
  p.pos =
      reg.normal(prefix + ".pos", {cfg.max_positions, cfg.pred_width}, 0.02, rng);
  for (std::size_t i = 0; i < cfg.pred_layers; ++i) {
    p.blocks.push_back(make_transformer_block(
        reg, prefix + ".block" + std::to_string(i), cfg.pred_width,
        cfg.pred_heads, cfg.pred_width * cfg.ff_mult, rng));
  }
  p.ln_f = make_norm(reg, prefix + ".ln_f", cfg.pred_width);
  p.head_dist =
      make_linear(reg, prefix + ".head_dist", cfg.pred_width, cfg.codebook_size, rng);
  p.head_latent =
      make_linear(reg, prefix + ".head_latent", cfg.pred_width, cfg.embed_dim, rng);
  return p;
}

// Predicts the next coarse assignment from the fine sequence: a learnable
// query token cross-attends to the embedded assignment rows.
struct CoarsePredictor {
  Linear embed;
  Tensor query;  // [1, width]
  std::vector<CrossBlock> blocks;
  Norm ln_f;
  Linear head;
  bool bypass = false;

  Tensor operator()(const Tensor& rows, const ForwardCtx& ctx) const {
    Tensor kv = embed(rows);
    Tensor q = query;
    for (const auto& b : blocks) q = b(q, kv, ctx);
    Tensor out = head(ln_f(q));
    return bypass ? out : softmax(out, 1, 1.0);
  }
};

inline CoarsePredictor make_coarse_predictor(ParamRegistry& reg,
                                             const std::string& prefix,
                                             const NetConfig& cfg, Rng& rng) {
  CoarsePredictor p;
  p.bypass = cfg.codebook_bypass;
  std::size_t in = p.bypass ? cfg.embed_dim : cfg.codebook_size;
  std::size_t out = p.bypass ? cfg.embed_dim : cfg.codebook_size;
  p.embed = make_linear(reg, prefix + ".embed", in, cfg.pred_width, rng);
  p.query = reg.normal(prefix + ".query", {1, cfg.pred_width},
                       1.0 / std::sqrt(static_cast<double>(cfg.pred_width)), rng);
  for (std::size_t i = 0; i < cfg.pred_layers; ++i) {
    p.blocks.push_back(make_cross_block(
        reg, prefix + ".block" + std::to_string(i), cfg.pred_width,
        cfg.pred_heads, cfg.pred_width * cfg.ff_mult, rng));
  }
  p.ln_f = make_norm(reg, prefix + ".ln_f", cfg.pred_width);
  p.head = make_linear(reg, prefix + ".head", cfg.pred_width, out, rng);
  return p;
}

struct Decoder {
  Linear fc1, fc2;
  Tensor operator()(const Tensor& z) const { return fc2(gelu(fc1(z))); }
};

inline Decoder make_decoder(ParamRegistry& reg, const std::string& prefix,
                            const NetConfig& cfg, Rng& rng) {
  Decoder d;
  d.fc1 = make_linear(reg, prefix + ".fc1", cfg.embed_dim, cfg.dec_hidden, rng);
  d.fc2 = make_linear(reg, prefix + ".fc2", cfg.dec_hidden, cfg.patch_len, rng);
  return d;
}

// Online networks. The codebook prototypes live in the same registry so the
// optimizer, EMA pairing, and serialization see one flat parameter list.
struct Model {
  NetConfig cfg;
  ParamRegistry reg;
  Encoder encoder;
  Codebook codebook;
  FinePredictor fine;
  CoarsePredictor coarse;
  Decoder decoder;
};

// EMA branch: only the feature path (encoder + codebook) is shadowed.
struct TargetNets {
  ParamRegistry reg;
  Encoder encoder;
  Codebook codebook;
};

inline Codebook register_codebook(ParamRegistry& reg, const std::string& name,
                                  const NetConfig& cfg, Rng& rng) {
  Codebook cb;
  cb.temperature = cfg.temperature;
  cb.prototypes = reg.normal(
      name, {cfg.codebook_size, cfg.embed_dim},
      1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)), rng);
  return cb;
}

inline Model build_model(const NetConfig& cfg, Rng& rng, bool trainable = true) {
  if (cfg.n_patches > cfg.max_positions) {
    throw TensorError("n_patches exceeds max_positions");
  }
  Model m;
  m.cfg = cfg;
  m.reg.trainable = trainable;
  m.encoder = make_encoder(m.reg, "enc", cfg, rng);
  m.codebook = register_codebook(m.reg, "codebook.prototypes", cfg, rng);
  m.fine = make_fine_predictor(m.reg, "fine", cfg, rng);
  m.coarse = make_coarse_predictor(m.reg, "coarse", cfg, rng);
  m.decoder = make_decoder(m.reg, "dec", cfg, rng);
  return m;
}

inline TargetNets build_target_nets(const NetConfig& cfg) {
  TargetNets t;
  t.reg.trainable = false;
  Rng dummy(0);
  t.encoder = make_encoder(t.reg, "enc", cfg, dummy);
  t.codebook = register_codebook(t.reg, "codebook.prototypes", cfg, dummy);
  return t;
}

// Copies every online value whose name exists in the shadow registry; the
// shadow holds exactly the encoder and codebook prefix of the online list.
inline void copy_into_targets(const Model& online, TargetNets& targets) {
  std::size_t ti = 0;
  for (const auto& [name, t] : online.reg.entries) {
    if (ti >= targets.reg.entries.size()) break;
    if (targets.reg.entries[ti].first != name) continue;
    targets.reg.entries[ti].second.mutable_values() = t.values();
    ++ti;
  }
  if (ti != targets.reg.entries.size()) {
    throw TensorError("target registry does not prefix the online registry");
  }
}

inline void ema_update_targets(const Model& online, TargetNets& targets,
                               double rho) {
  std::size_t ti = 0;
  for (const auto& [name, t] : online.reg.entries) {
    if (ti >= targets.reg.entries.size()) break;
    if (targets.reg.entries[ti].first != name) continue;
    ema_update(targets.reg.entries[ti].second, t, rho);
    ++ti;
  }
  if (ti != targets.reg.entries.size()) {
    throw TensorError("target registry does not prefix the online registry");
  }
}

}  // namespace mtsjepa
