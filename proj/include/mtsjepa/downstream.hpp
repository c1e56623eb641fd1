#pragma once

// Early-warning protocol on top of a trained model: the frozen encoder and
// codebook turn each context window into per-variable code distributions,
// variable-wise max-pooling gives a fixed-size feature, a small supervised
// MLP scores the probability that the NEXT window is anomalous, a decision
// threshold is picked on validation F1, and final metrics come from the
// held-out test split. The classifier only ever sees the train split and the
// threshold search only sees validation scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtsjepa/data.hpp"
#include "mtsjepa/networks.hpp"
#include "mtsjepa/trainer.hpp"

namespace mtsjepa {

struct DownstreamConfig {
  std::size_t hidden = 128;
  double lr = 1e-3;
  std::size_t epochs = 2000;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::size_t window_stride = 0;  // 0 resolves to the window length
  std::uint64_t seed = 0;
};

// Pooled feature for one context window: entrywise max over variables of the
// per-variable code distributions, flattened to n_patches * codebook_size.
inline std::vector<double> extract_features(const Model& model,
                                            const RawSeries& series,
                                            std::size_t start) {
  const NetConfig& net = model.cfg;
  if (net.codebook_bypass) {
    throw DataError("extract_features: bypass model has no code distributions");
  }
  if (series.v == 0) throw DataError("extract_features: series has no channels");
  std::size_t w = net.window_len();
  NoGradGuard ng;
  ForwardCtx ctx;
  std::vector<double> pooled(net.n_patches * net.codebook_size, 0.0);
  for (std::size_t vi = 0; vi < series.v; ++vi) {
    std::vector<double> raw = window_channel(series, start, w, vi);
    RevinStats st = revin_fit(raw.data(), raw.size());
    std::vector<double> norm(w);
    revin_normalize(raw.data(), w, st, norm.data());
    Tensor fine =
        Tensor::from_values({net.n_patches, net.patch_len},
                            patchify(norm, net.n_patches, net.patch_len));
    Tensor h = model.encoder(fine, ctx);
    Tensor p = soft_assign(model.codebook, h);
    const auto& pv = p.values();
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      pooled[i] = std::max(pooled[i], pv[i]);
    }
  }
  return pooled;
}

// Chronological prefix split over window pairs; every range must be nonempty.
struct EvalSplit {
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
};

inline EvalSplit chronological_split(std::size_t n, double train_fraction,
                                     double val_fraction) {
  EvalSplit s;
  s.n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_fraction));
  s.n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * val_fraction));
  if (s.n_train == 0 || s.n_val == 0 || s.n_train + s.n_val >= n) {
    throw DataError("chronological_split: a split range is empty");
  }
  s.n_test = n - s.n_train - s.n_val;
  return s;
}

// Two-layer classifier head: input -> hidden (GELU) -> 1 logit.
struct MlpHead {
  ParamRegistry reg;
  Linear fc1, fc2;
  std::size_t input_dim = 0;
};

inline MlpHead make_mlp_head(std::size_t input_dim, std::size_t hidden,
                             Rng& rng) {
  MlpHead head;
  head.input_dim = input_dim;
  head.fc1 = make_linear(head.reg, "head.fc1", input_dim, hidden, rng);
  head.fc2 = make_linear(head.reg, "head.fc2", hidden, 1, rng);
  return head;
}

inline Tensor head_logits(const MlpHead& head, const Tensor& x) {
  return head.fc2(gelu(head.fc1(x)));
}

// Sigmoid scores for a row-major feature matrix, outside any gradient tape.
inline std::vector<double> head_scores(const MlpHead& head,
                                       const std::vector<std::vector<double>>& x) {
  NoGradGuard ng;
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& row : x) {
    if (row.size() != head.input_dim) {
      throw ShapeError("head_scores: feature width != classifier input");
    }
    Tensor xt = Tensor::from_values({1, head.input_dim}, row);
    Tensor s = sigmoid(head_logits(head, xt));
    out.push_back(s.values()[0]);
  }
  return out;
}

struct ClassifierFit {
  MlpHead head;
  std::vector<double> bce;  // full-batch training loss per epoch
  bool degenerate = false;  // train split carried only one class
};

// Full-batch Adam on binary cross-entropy. Deterministic given the seed:
// initialization is the only random draw.
inline ClassifierFit train_classifier(const std::vector<std::vector<double>>& x,
                                      const std::vector<int>& y,
                                      const DownstreamConfig& cfg) {
  if (x.empty() || x.size() != y.size()) {
    throw DataError("train_classifier: empty or misaligned training split");
  }
  std::size_t n = x.size();
  std::size_t d = x[0].size();
  Rng rng(cfg.seed);
  ClassifierFit fit;
  fit.head = make_mlp_head(d, cfg.hidden, rng);
  int pos = 0;
  for (int v : y) pos += v;
  fit.degenerate = pos == 0 || pos == static_cast<int>(n);

  std::vector<double> flat;
  flat.reserve(n * d);
  for (const auto& row : x) {
    if (row.size() != d) throw ShapeError("train_classifier: ragged features");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  Tensor xt = Tensor::from_values({n, d}, std::move(flat));
  std::vector<double> yv(n);
  for (std::size_t i = 0; i < n; ++i) yv[i] = static_cast<double>(y[i]);
  Tensor yt = Tensor::from_values({n, 1}, std::move(yv));

  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = 0.0;
  AdamState st = make_adam_state(fit.head.reg);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    fit.head.reg.zero_grads();
    Tensor s = sigmoid(head_logits(fit.head, xt));
    Tensor one_minus = add_const(neg(s), 1.0);
    Tensor ll = add(mul(yt, log(clamp_min(s, 1e-12))),
                    mul(add_const(neg(yt), 1.0),
                        log(clamp_min(one_minus, 1e-12))));
    Tensor loss = neg(mean_all(ll));
    fit.bce.push_back(loss.values()[0]);
    GradTape::active().backward(loss);
    GradTape::active().clear();
    adam_step(fit.head.reg, st, ac);
  }
  fit.head.reg.zero_grads();
  return fit;
}

// Confusion counts with the strict decision rule "positive iff score > delta".
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion_at(const std::vector<double>& scores,
                              const std::vector<int>& labels, double delta) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    bool pred = scores[i] > delta;
    if (pred && labels[i]) ++c.tp;
    else if (pred) ++c.fp;
    else if (labels[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1_from(const Confusion& c) {
  double p = c.tp + c.fp > 0
                 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                 : 0.0;
  double r = c.tp + c.fn > 0
                 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                 : 0.0;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

struct ThresholdChoice {
  double threshold = std::numeric_limits<double>::infinity();
  double f1 = 0.0;
};

// Exact F1 maximizer over the step function's breakpoints: candidates are
// -inf, midpoints between consecutive distinct sorted scores, and +inf.
// Ties keep the lowest threshold; an everywhere-zero F1 returns the +inf
// sentinel (predict nothing).
inline ThresholdChoice select_threshold(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw DataError("select_threshold: empty or misaligned validation split");
  }
  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = scores[order[i]];
  // suffix_pos[i] = positives among sorted[i..n)
  std::vector<std::size_t> suffix_pos(n + 1, 0);
  for (std::size_t i = n; i > 0; --i) {
    suffix_pos[i - 1] = suffix_pos[i] + (labels[order[i - 1]] ? 1u : 0u);
  }
  std::size_t total_pos = suffix_pos[0];

  std::vector<double> candidates;
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (sorted[i] < sorted[i + 1]) {
      candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    }
  }
  candidates.push_back(std::numeric_limits<double>::infinity());

  ThresholdChoice best;
  best.threshold = -std::numeric_limits<double>::infinity();
  best.f1 = -1.0;
  for (double delta : candidates) {
    // First index predicted positive under "score > delta"; recomputed by
    // comparison so midpoint rounding cannot desynchronize count and rule.
    std::size_t start = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), delta) -
        sorted.begin());
    Confusion c;
    c.tp = suffix_pos[start];
    c.fp = (n - start) - c.tp;
    c.fn = total_pos - c.tp;
    c.tn = start - c.fn;
    double f1 = f1_from(c);
    if (f1 > best.f1) {
      best.f1 = f1;
      best.threshold = delta;
    }
  }
  if (best.f1 <= 0.0) {
    return ThresholdChoice{};  // predict nothing
  }
  return best;
}

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  Confusion counts;
  bool has_auc = false;
  double auc = 0.0;
  std::size_t n = 0;
};

// Rank-statistic AUC with average ranks on tied scores; undefined (absent)
// when either class is missing.
inline MetricsReport compute_metrics(const std::vector<double>& scores,
                                     const std::vector<int>& labels,
                                     double threshold) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw DataError("compute_metrics: empty or misaligned scores");
  }
  MetricsReport m;
  m.n = scores.size();
  m.threshold = threshold;
  m.counts = confusion_at(scores, labels, threshold);
  const Confusion& c = m.counts;
  m.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) /
                                      static_cast<double>(c.tp + c.fp)
                                : 0.0;
  m.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) /
                                   static_cast<double>(c.tp + c.fn)
                             : 0.0;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;

  std::size_t n_pos = c.tp + c.fn;
  std::size_t n_neg = c.fp + c.tn;
  if (n_pos > 0 && n_neg > 0) {
    std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] < scores[b];
    });
    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && scores[order[j]] == scores[order[i]]) ++j;
      double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
      for (std::size_t t = i; t < j; ++t) {
        if (labels[order[t]]) pos_rank_sum += avg_rank;
      }
      i = j;
    }
    double np = static_cast<double>(n_pos);
    double nn = static_cast<double>(n_neg);
    m.auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
    m.has_auc = true;
  }
  return m;
}

inline nlohmann::json metrics_report_json(const MetricsReport& m) {
  nlohmann::json j{{"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"tp", m.counts.tp},
                   {"fp", m.counts.fp},
                   {"tn", m.counts.tn},
                   {"fn", m.counts.fn},
                   {"n", m.n}};
  if (std::isfinite(m.threshold)) {
    j["threshold"] = m.threshold;
  } else {
    j["threshold"] = m.threshold > 0.0 ? "+inf" : "-inf";
  }
  if (m.has_auc) j["auc"] = m.auc;
  return j;
}

// One score row per evaluated window, written as CSV for external tooling.
struct ScoreRow {
  std::size_t window_start = 0;
  double score = 0.0;
  int label = 0;
};

inline std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "window_start,score,label\n";
  for (const auto& r : rows) {
    out += std::to_string(r.window_start) + "," + format_double(r.score) +
           "," + std::to_string(r.label) + "\n";
  }
  return out;
}

// One row per (window, variable, patch) dominant-code assignment; the code
// usage histograms are computed from this long-format file.
struct CodeRow {
  std::size_t window_start = 0;
  int label = 0;
  std::size_t code = 0;
};

inline std::string codes_csv(const std::vector<CodeRow>& rows) {
  std::string out = "window_start,label,code\n";
  for (const auto& r : rows) {
    out += std::to_string(r.window_start) + "," + std::to_string(r.label) +
           "," + std::to_string(r.code) + "\n";
  }
  return out;
}

// Dominant code of every (variable, patch) cell of one context window.
inline std::vector<std::size_t> window_dominant_codes(const Model& model,
                                                      const RawSeries& series,
                                                      std::size_t start) {
  const NetConfig& net = model.cfg;
  if (net.codebook_bypass) {
    throw DataError("window_dominant_codes: bypass model has no codes");
  }
  std::size_t w = net.window_len();
  NoGradGuard ng;
  ForwardCtx ctx;
  std::vector<std::size_t> out;
  out.reserve(series.v * net.n_patches);
  for (std::size_t vi = 0; vi < series.v; ++vi) {
    std::vector<double> raw = window_channel(series, start, w, vi);
    RevinStats st = revin_fit(raw.data(), raw.size());
    std::vector<double> norm(w);
    revin_normalize(raw.data(), w, st, norm.data());
    Tensor fine =
        Tensor::from_values({net.n_patches, net.patch_len},
                            patchify(norm, net.n_patches, net.patch_len));
    Tensor h = model.encoder(fine, ctx);
    Tensor p = soft_assign(model.codebook, h);
    for (std::size_t r = 0; r < net.n_patches; ++r) {
      out.push_back(
          dominant_index(p.values().data() + r * net.codebook_size,
                         net.codebook_size));
    }
  }
  return out;
}

struct ProtocolResult {
  EvalSplit split;
  ClassifierFit classifier;
  double threshold = 0.0;
  double val_f1 = 0.0;
  MetricsReport val;
  MetricsReport test;
  std::vector<ScoreRow> test_scores;
  std::vector<CodeRow> test_codes;
};

// Full protocol. The checkpoint's channel mask is applied to the input first,
// so the series must contain the channels the model was trained on.
inline ProtocolResult run_protocol(const Model& model,
                                   const std::vector<std::size_t>& removed_channels,
                                   const RawSeries& raw,
                                   const DownstreamConfig& cfg) {
  if (!raw.labeled()) throw DataError("run_protocol: series has no labels");
  RawSeries series = apply_channel_mask(raw, removed_channels);
  if (series.v == 0) throw DataError("run_protocol: channel mask removed everything");
  std::size_t w = model.cfg.window_len();
  std::size_t stride = cfg.window_stride == 0 ? w : cfg.window_stride;
  std::vector<WindowPair> pairs = make_window_pairs(series, w, stride);

  ProtocolResult res;
  res.split = chronological_split(pairs.size(), cfg.train_fraction,
                                  cfg.val_fraction);

  std::vector<std::vector<double>> features(pairs.size());
  std::vector<int> labels(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    features[i] = extract_features(model, series, pairs[i].start);
    labels[i] = *pairs[i].label;
  }

  auto slice_features = [&](std::size_t lo, std::size_t hi) {
    return std::vector<std::vector<double>>(features.begin() + lo,
                                            features.begin() + hi);
  };
  auto slice_labels = [&](std::size_t lo, std::size_t hi) {
    return std::vector<int>(labels.begin() + lo, labels.begin() + hi);
  };
  std::size_t v0 = res.split.n_train;
  std::size_t t0 = v0 + res.split.n_val;

  res.classifier =
      train_classifier(slice_features(0, v0), slice_labels(0, v0), cfg);

  std::vector<double> val_scores =
      head_scores(res.classifier.head, slice_features(v0, t0));
  std::vector<int> val_labels = slice_labels(v0, t0);
  ThresholdChoice choice = select_threshold(val_scores, val_labels);
  res.threshold = choice.threshold;
  res.val_f1 = choice.f1;
  res.val = compute_metrics(val_scores, val_labels, choice.threshold);

  std::vector<double> test_scores =
      head_scores(res.classifier.head, slice_features(t0, pairs.size()));
  std::vector<int> test_labels = slice_labels(t0, pairs.size());
  res.test = compute_metrics(test_scores, test_labels, choice.threshold);

  for (std::size_t i = t0; i < pairs.size(); ++i) {
    res.test_scores.push_back(
        ScoreRow{pairs[i].start, test_scores[i - t0], labels[i]});
    for (std::size_t code : window_dominant_codes(model, series, pairs[i].start)) {
      res.test_codes.push_back(CodeRow{pairs[i].start, labels[i], code});
    }
  }
  return res;
}

}  // namespace mtsjepa
