#pragma once

// Series loading, per-window instance normalization, sliding-window pair
// construction, the two temporal views (patch sequence and block-averaged
// coarse profile), and the synthetic regime generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtsjepa/io.hpp"
#include "mtsjepa/rng.hpp"

namespace mtsjepa {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawSeries {
  std::size_t t = 0;                  // timesteps
  std::size_t v = 0;                  // channels
  std::vector<double> values;         // row-major [t, v]
  std::vector<std::uint8_t> labels;   // empty when unlabeled, else size t
  std::vector<std::string> channel_names;

  double at(std::size_t ti, std::size_t vi) const {
    return values[ti * v + vi];
  }
  bool labeled() const { return !labels.empty(); }
};

// ---------------------------------------------------------------------------
// CSV format: one header row; one column per channel; optional trailing
// integer column named "label".

inline RawSeries read_series_csv(const std::string& path) {
  std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty series file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  RawSeries s;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) s.channel_names.push_back(cell);
  }
  bool has_label = !s.channel_names.empty() && s.channel_names.back() == "label";
  if (has_label) s.channel_names.pop_back();
  if (s.channel_names.empty()) throw DataError("no channels in: " + path);
  s.v = s.channel_names.size();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        if (col < s.v) {
          s.values.push_back(std::stod(cell));
        } else if (has_label && col == s.v) {
          s.labels.push_back(cell.find('1') != std::string::npos ? 1 : 0);
        } else {
          throw DataError("");
        }
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": bad cell '" + cell + "'");
      }
      ++col;
    }
    if (col != s.v + (has_label ? 1 : 0)) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected " + std::to_string(s.v + (has_label ? 1 : 0)) +
                      " columns, got " + std::to_string(col));
    }
    ++s.t;
  }
  if (s.t == 0) throw DataError("no data rows in: " + path);
  return s;
}

inline std::string series_to_csv(const RawSeries& s) {
  std::string out;
  out.reserve(s.t * s.v * 20);
  for (std::size_t vi = 0; vi < s.v; ++vi) {
    if (vi) out += ',';
    out += s.channel_names.empty() ? "ch_" + std::to_string(vi)
                                   : s.channel_names[vi];
  }
  if (s.labeled()) out += ",label";
  out += '\n';
  for (std::size_t ti = 0; ti < s.t; ++ti) {
    for (std::size_t vi = 0; vi < s.v; ++vi) {
      if (vi) out += ',';
      out += format_double(s.at(ti, vi));
    }
    if (s.labeled()) {
      out += ',';
      out += s.labels[ti] ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

inline void write_series_csv(const std::string& path, const RawSeries& s) {
  atomic_write_file(path, series_to_csv(s));
}

// ---------------------------------------------------------------------------
// Constant-channel removal, fitted on the training rows only.

inline std::vector<std::size_t> constant_channel_indices(const RawSeries& s,
                                                         std::size_t t_end) {
  if (t_end == 0 || t_end > s.t) t_end = s.t;
  std::vector<std::size_t> removed;
  for (std::size_t vi = 0; vi < s.v; ++vi) {
    double lo = s.at(0, vi), hi = lo;
    for (std::size_t ti = 1; ti < t_end; ++ti) {
      double x = s.at(ti, vi);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (lo == hi) removed.push_back(vi);
  }
  if (removed.size() == s.v) {
    throw DataError("all channels are constant on the training split");
  }
  return removed;
}

inline RawSeries apply_channel_mask(const RawSeries& s,
                                    const std::vector<std::size_t>& removed) {
  std::vector<bool> drop(s.v, false);
  for (std::size_t vi : removed) {
    if (vi >= s.v) throw DataError("channel mask index out of range");
    drop[vi] = true;
  }
  RawSeries out;
  out.t = s.t;
  out.labels = s.labels;
  for (std::size_t vi = 0; vi < s.v; ++vi) {
    if (!drop[vi]) {
      out.channel_names.push_back(s.channel_names.empty()
                                      ? "ch_" + std::to_string(vi)
                                      : s.channel_names[vi]);
    }
  }
  out.v = out.channel_names.size();
  out.values.reserve(out.t * out.v);
  for (std::size_t ti = 0; ti < s.t; ++ti) {
    for (std::size_t vi = 0; vi < s.v; ++vi) {
      if (!drop[vi]) out.values.push_back(s.at(ti, vi));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-window instance normalization. Stats are cached so the decoder's
// outputs can be mapped back to the raw scale exactly.

struct RevinStats {
  double mean = 0.0;
  double std_eps = 1.0;  // population std plus the stability epsilon
};

constexpr double kRevinEpsilon = 1e-5;

inline RevinStats revin_fit(const double* x, std::size_t n) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  return {mean, std::sqrt(var) + kRevinEpsilon};
}

inline void revin_normalize(const double* x, std::size_t n,
                            const RevinStats& st, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - st.mean) / st.std_eps;
}

inline void revin_denormalize(const double* x, std::size_t n,
                              const RevinStats& st, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * st.std_eps + st.mean;
}

// ---------------------------------------------------------------------------
// Views. A window of length T_w = P * L becomes P contiguous patches of
// length L; the coarse profile averages every P consecutive points, giving
// one length-L row.

inline std::vector<double> patchify(const std::vector<double>& w,
                                    std::size_t n_patches,
                                    std::size_t patch_len) {
  if (w.size() != n_patches * patch_len) {
    throw DataError("patchify: window length must equal n_patches*patch_len");
  }
  return w;  // row-major [n_patches, patch_len] is the same layout
}

inline std::vector<double> down_avg(const std::vector<double>& w,
                                    std::size_t p) {
  if (p == 0 || w.size() % p != 0) {
    throw DataError("down_avg: window length must be divisible by P");
  }
  std::size_t l = w.size() / p;
  std::vector<double> out(l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += w[i * p + j];
    out[i] = s / static_cast<double>(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Window pairs: context window W_t and target window W_{t+1}, laid out at a
// fixed stride. The pair label is 1 iff any point of the target window is
// labeled anomalous. Tail timesteps that do not fill a pair are dropped.

struct WindowPair {
  std::size_t start = 0;         // first index of the context window
  std::optional<int> label;      // target-window label, when series is labeled
};

inline std::vector<WindowPair> make_window_pairs(const RawSeries& s,
                                                 std::size_t window_len,
                                                 std::size_t stride) {
  if (s.t < 2 * window_len) {
    throw DataError("series too short for one context/target window pair");
  }
  if (stride == 0) throw DataError("stride must be positive");
  std::vector<WindowPair> pairs;
  for (std::size_t start = 0; start + 2 * window_len <= s.t; start += stride) {
    WindowPair p;
    p.start = start;
    if (s.labeled()) {
      int y = 0;
      for (std::size_t i = start + window_len; i < start + 2 * window_len; ++i) {
        if (s.labels[i]) {
          y = 1;
          break;
        }
      }
      p.label = y;
    }
    pairs.push_back(p);
  }
  return pairs;
}

// Copies one channel of one window out of the row-major series.
inline std::vector<double> window_channel(const RawSeries& s,
                                          std::size_t start, std::size_t len,
                                          std::size_t vi) {
  std::vector<double> out(len);
  for (std::size_t i = 0; i < len; ++i) out[i] = s.at(start + i, vi);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic regime generator: per-channel AR(1) plus seasonality, with
// labeled anomaly segments (level shift / variance burst / slow drift) whose
// precursor dynamics occupy exactly the window preceding each segment, so a
// model that reads the context window can predict the segment.

struct SynthConfig {
  double anomaly_rate = 0.10;
  std::size_t window_len = 100;   // precursor length and event alignment
  std::size_t event_min = 80;
  std::size_t event_max = 100;    // <= window_len keeps each event inside one
                                  // grid window, so the only positive context
                                  // windows are the ones holding a precursor
  double ar_coef = 0.7;
  double noise_std = 0.5;
  double season_amp = 1.0;
  double season_period = 47.0;
  double precursor_freq = 8.0;
  double base_offset = 3.0;       // per-channel level spacing
};

inline RawSeries synth_regime_series(std::uint64_t seed, std::size_t t,
                                     std::size_t v,
                                     const SynthConfig& cfg = {}) {
  if (t == 0 || v == 0) throw DataError("synth: t and v must be positive");
  RawSeries s;
  s.t = t;
  s.v = v;
  s.values.assign(t * v, 0.0);
  s.labels.assign(t, 0);
  for (std::size_t vi = 0; vi < v; ++vi) {
    s.channel_names.push_back("ch_" + std::to_string(vi));
  }
  Rng rng(seed);

  // Base dynamics.
  for (std::size_t vi = 0; vi < v; ++vi) {
    Rng ch = rng.split();
    double phase = 6.28318530717958647692 * static_cast<double>(vi) /
                   static_cast<double>(v);
    double ar = 0.0;
    for (std::size_t ti = 0; ti < t; ++ti) {
      ar = cfg.ar_coef * ar + ch.normal(0.0, cfg.noise_std);
      double season = cfg.season_amp *
                      std::sin(6.28318530717958647692 *
                                   static_cast<double>(ti) / cfg.season_period +
                               phase);
      s.values[ti * v + vi] =
          cfg.base_offset * static_cast<double>(vi) + ar + season;
    }
  }

  if (cfg.anomaly_rate <= 0.0) return s;

  // Event schedule: starts aligned to the window grid so the precursor fills
  // exactly the preceding window.
  double avg_len = 0.5 * static_cast<double>(cfg.event_min + cfg.event_max);
  std::size_t n_events = static_cast<std::size_t>(
      std::llround(cfg.anomaly_rate * static_cast<double>(t) / avg_len));
  if (n_events == 0) n_events = 1;
  double region = static_cast<double>(t) / static_cast<double>(n_events);
  std::size_t w = cfg.window_len;
  std::size_t prev_end = 2 * w;  // keep the series head clean
  Rng ev = rng.split();
  for (std::size_t e = 0; e < n_events; ++e) {
    std::size_t len = cfg.event_min + ev.below(cfg.event_max - cfg.event_min + 1);
    std::size_t base =
        static_cast<std::size_t>(region * static_cast<double>(e));
    std::size_t jitter = ev.below(std::max<std::size_t>(region / 4, 1));
    std::size_t start = ((base + jitter + w - 1) / w) * w;  // align up
    if (start < prev_end + 2 * w) start = ((prev_end + 3 * w - 1) / w) * w;
    if (start + len + w > t) break;
    int type = static_cast<int>(e % 3);
    double severity = 3.0 + ev.uniform();
    double sign = ev.uniform() < 0.5 ? -1.0 : 1.0;

    for (std::size_t vi = 0; vi < v; ++vi) {
      double pre_amp = ev.uniform(2.0, 3.0);
      double drift_dir = ev.uniform() < 0.5 ? -1.0 : 1.0;
      // Precursor: rising high-frequency oscillation plus a slight drift in
      // the window before the labeled segment (left unlabeled on purpose).
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t ti = start - w + j;
        double ramp = static_cast<double>(j + 1) / static_cast<double>(w);
        double wob = pre_amp * ramp *
                     std::sin(6.28318530717958647692 *
                              static_cast<double>(j) / cfg.precursor_freq);
        s.values[ti * v + vi] += wob + 0.8 * drift_dir * ramp;
      }
      for (std::size_t j = 0; j < len; ++j) {
        std::size_t ti = start + j;
        double& x = s.values[ti * v + vi];
        switch (type) {
          case 0:  // level shift
            x += sign * severity;
            break;
          case 1:  // variance burst
            x += ev.normal(0.0, severity * cfg.noise_std * 3.0);
            break;
          default:  // slow drift
            x += sign * severity * static_cast<double>(j + 1) /
                 static_cast<double>(len);
            break;
        }
      }
    }
    for (std::size_t j = 0; j < len; ++j) s.labels[start + j] = 1;
    prev_end = start + len;
  }
  return s;
}

}  // namespace mtsjepa
