#pragma once

// Static report artifacts: numeric CSV parsing, ROC geometry, per-class code
// usage, and a dependency-free SVG writer for loss curves, ROC plots, and
// code-usage histograms.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtsjepa/data.hpp"
#include "mtsjepa/io.hpp"

namespace mtsjepa {

// ---------------------------------------------------------------------------
// Numeric CSV tables. Header row names the columns; empty cells become NaN.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw DataError("missing csv column: " + name);
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_cell(const std::string& cell) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw DataError("non-numeric csv cell: " + cell);
  }
  if (pos != cell.size()) throw DataError("non-numeric csv cell: " + cell);
  return v;
}

}  // namespace detail

inline CsvTable parse_numeric_csv(const std::string& text) {
  CsvTable t;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(
        pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      t.header = detail::split_csv_line(line);
      saw_header = true;
      continue;
    }
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw DataError("csv row width mismatch");
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      row[i] = detail::parse_cell(cells[i]);
    }
    t.rows.push_back(std::move(row));
  }
  if (!saw_header) throw DataError("empty csv");
  return t;
}

// ---------------------------------------------------------------------------
// Typed views over score and code files.

struct ScoreSet {
  std::vector<double> starts;
  std::vector<double> scores;
  std::vector<int> labels;
};

inline ScoreSet parse_scores(const std::string& text) {
  CsvTable t = parse_numeric_csv(text);
  std::size_t cs = t.column("window_start");
  std::size_t cv = t.column("score");
  std::size_t cl = t.column("label");
  if (t.rows.empty()) throw DataError("scores file has no rows");
  ScoreSet out;
  for (const auto& r : t.rows) {
    if (!std::isfinite(r[cv])) throw DataError("non-finite score");
    if (r[cl] != 0.0 && r[cl] != 1.0) throw DataError("label must be 0 or 1");
    out.starts.push_back(r[cs]);
    out.scores.push_back(r[cv]);
    out.labels.push_back(static_cast<int>(r[cl]));
  }
  return out;
}

struct CodeSet {
  std::vector<int> labels;
  std::vector<std::size_t> codes;
};

inline CodeSet parse_codes(const std::string& text) {
  CsvTable t = parse_numeric_csv(text);
  std::size_t cl = t.column("label");
  std::size_t cc = t.column("code");
  if (t.rows.empty()) throw DataError("codes file has no rows");
  CodeSet out;
  for (const auto& r : t.rows) {
    if (r[cl] != 0.0 && r[cl] != 1.0) throw DataError("label must be 0 or 1");
    double c = r[cc];
    if (!(c >= 0.0) || c != std::floor(c)) {
      throw DataError("code must be a nonnegative integer");
    }
    out.labels.push_back(static_cast<int>(r[cl]));
    out.codes.push_back(static_cast<std::size_t>(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ROC geometry. Points are grouped by distinct score (descending), so the
// trapezoid area equals the rank AUC with half credit for ties.

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

inline std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DataError("scores and labels length mismatch");
  }
  std::size_t np = 0, nn = 0;
  for (int y : labels) (y ? np : nn) += 1;
  if (np == 0 || nn == 0) throw DataError("roc needs both classes");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(nn),
                   static_cast<double>(tp) / static_cast<double>(np)});
    i = j;
  }
  return pts;
}

inline double roc_auc(const std::vector<RocPoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].fpr - pts[i - 1].fpr) * 0.5 *
            (pts[i].tpr + pts[i - 1].tpr);
  }
  return area;
}

// ---------------------------------------------------------------------------
// Per-class code occurrence probabilities, sorted by the anomalous-minus-
// normal probability gap (largest first; ties break toward the lower code).

struct CodeUsage {
  std::size_t code = 0;
  double p_normal = 0.0;
  double p_anomalous = 0.0;
  double gap = 0.0;
};

inline std::vector<CodeUsage> code_usage(const CodeSet& set) {
  if (set.codes.empty()) throw DataError("no code rows");
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts;
  std::size_t n_normal = 0, n_anomalous = 0;
  for (std::size_t i = 0; i < set.codes.size(); ++i) {
    auto& c = counts[set.codes[i]];
    if (set.labels[i]) {
      ++c.second;
      ++n_anomalous;
    } else {
      ++c.first;
      ++n_normal;
    }
  }
  std::vector<CodeUsage> out;
  for (const auto& [code, c] : counts) {
    CodeUsage u;
    u.code = code;
    u.p_normal = n_normal ? static_cast<double>(c.first) /
                                static_cast<double>(n_normal)
                          : 0.0;
    u.p_anomalous = n_anomalous ? static_cast<double>(c.second) /
                                      static_cast<double>(n_anomalous)
                                : 0.0;
    u.gap = u.p_anomalous - u.p_normal;
    out.push_back(u);
  }
  std::sort(out.begin(), out.end(), [](const CodeUsage& a, const CodeUsage& b) {
    if (a.gap != b.gap) return a.gap > b.gap;
    return a.code < b.code;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Minimal SVG writer. Output is deterministic for identical inputs.

namespace svg {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

class Builder {
 public:
  Builder(double w, double h) : w_(w), h_(h) {}

  void line(double x1, double y1, double x2, double y2,
            const std::string& stroke, double width = 1.0,
            bool dashed = false) {
    body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" +
             num(x2) + "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke +
             "\" stroke-width=\"" + num(width) + "\"";
    if (dashed) body_ += " stroke-dasharray=\"4 3\"";
    body_ += "/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& stroke, double width = 1.5) {
    if (pts.size() < 2) return;
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke +
             "\" stroke-width=\"" + num(width) + "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) body_ += " ";
      body_ += num(pts[i].first) + "," + num(pts[i].second);
    }
    body_ += "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" +
             num(w) + "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" +
             num(r) + "\" fill=\"" + fill + "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 11.0,
            const std::string& anchor = "start",
            const std::string& fill = "#333333") {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" +
             num(size) +
             "\" font-family=\"Helvetica, Arial, sans-serif\" text-anchor=\"" +
             anchor + "\" fill=\"" + fill + "\">" + escape(s) + "</text>\n";
  }

  std::string finish() const {
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      num(w_) + "\" height=\"" + num(h_) +
                      "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + num(w_) + "\" height=\"" +
           num(h_) + "\" fill=\"#ffffff\"/>\n";
    out += body_;
    out += "</svg>\n";
    return out;
  }

 private:
  double w_, h_;
  std::string body_;
};

// Maps a value range onto a pixel range (p0 may exceed p1 for inverted axes).
struct LinearScale {
  double lo = 0.0, hi = 1.0, p0 = 0.0, p1 = 1.0;

  double operator()(double v) const {
    if (hi == lo) return 0.5 * (p0 + p1);
    return p0 + (v - lo) / (hi - lo) * (p1 - p0);
  }
};

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// Axis box with five evenly spaced ticks per axis.
inline void draw_frame(Builder& b, const LinearScale& x, const LinearScale& y,
                       const std::string& title, const std::string& xlabel,
                       const std::string& ylabel) {
  const std::string axis = "#444444";
  b.line(x.p0, y.p0, x.p1, y.p0, axis);
  b.line(x.p0, y.p0, x.p0, y.p1, axis);
  for (int i = 0; i <= 4; ++i) {
    double f = static_cast<double>(i) / 4.0;
    double xv = x.lo + f * (x.hi - x.lo);
    double yv = y.lo + f * (y.hi - y.lo);
    double xp = x(xv);
    double yp = y(yv);
    b.line(xp, y.p0, xp, y.p0 + 4.0, axis);
    b.text(xp, y.p0 + 16.0, tick_label(xv), 10.0, "middle");
    b.line(x.p0 - 4.0, yp, x.p0, yp, axis);
    b.text(x.p0 - 6.0, yp + 3.5, tick_label(yv), 10.0, "end");
  }
  b.text(0.5 * (x.p0 + x.p1), 20.0, title, 13.0, "middle", "#111111");
  b.text(0.5 * (x.p0 + x.p1), y.p0 + 32.0, xlabel, 11.0, "middle");
  b.text(16.0, 0.5 * (y.p0 + y.p1), ylabel, 11.0, "middle");
}

}  // namespace svg

namespace detail {

inline const std::vector<std::string>& series_palette() {
  static const std::vector<std::string> p = {
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loss curves: every loss column against the global step index, with the
// periodic validation total overlaid as markers.

inline std::string loss_curves_svg(const CsvTable& log) {
  if (log.rows.empty()) throw DataError("training log has no rows");
  std::vector<std::size_t> series_cols;
  for (std::size_t i = 0; i < log.header.size(); ++i) {
    const std::string& h = log.header[i];
    if (h == "epoch" || h == "step" || h == "val_total") continue;
    series_cols.push_back(i);
  }
  if (series_cols.empty()) throw DataError("training log has no loss columns");
  std::size_t val_col = log.column("val_total");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& r : log.rows) {
    for (std::size_t c : series_cols) {
      if (!std::isfinite(r[c])) continue;
      lo = std::min(lo, r[c]);
      hi = std::max(hi, r[c]);
    }
    if (std::isfinite(r[val_col])) {
      lo = std::min(lo, r[val_col]);
      hi = std::max(hi, r[val_col]);
    }
  }
  if (!std::isfinite(lo)) throw DataError("training log has no finite losses");
  double pad = hi == lo ? std::max(1.0, std::fabs(hi)) * 0.05
                        : (hi - lo) * 0.05;

  svg::Builder b(720.0, 420.0);
  svg::LinearScale xs{1.0, static_cast<double>(log.rows.size()), 64.0, 560.0};
  svg::LinearScale ys{lo - pad, hi + pad, 380.0, 40.0};
  svg::draw_frame(b, xs, ys, "Training losses", "step", "loss");

  const auto& palette = detail::series_palette();
  for (std::size_t s = 0; s < series_cols.size(); ++s) {
    std::size_t c = series_cols[s];
    const std::string& color = palette[s % palette.size()];
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 0; r < log.rows.size(); ++r) {
      double v = log.rows[r][c];
      if (!std::isfinite(v)) continue;
      pts.emplace_back(xs(static_cast<double>(r + 1)), ys(v));
    }
    b.polyline(pts, color, 1.2);
    double ly = 40.0 + 16.0 * static_cast<double>(s);
    b.rect(572.0, ly - 8.0, 10.0, 10.0, color);
    b.text(586.0, ly + 1.0, log.header[c], 10.0);
  }
  std::vector<std::pair<double, double>> vpts;
  for (std::size_t r = 0; r < log.rows.size(); ++r) {
    double v = log.rows[r][val_col];
    if (!std::isfinite(v)) continue;
    vpts.emplace_back(xs(static_cast<double>(r + 1)), ys(v));
  }
  b.polyline(vpts, "#111111", 1.6);
  for (const auto& p : vpts) b.circle(p.first, p.second, 2.5, "#111111");
  double ly = 40.0 + 16.0 * static_cast<double>(series_cols.size());
  b.rect(572.0, ly - 8.0, 10.0, 10.0, "#111111");
  b.text(586.0, ly + 1.0, "val_total", 10.0);
  return b.finish();
}

// ---------------------------------------------------------------------------
// ROC plot with the chance diagonal and the trapezoid AUC annotated.

inline std::string roc_svg(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  std::vector<RocPoint> pts = roc_points(scores, labels);
  double auc = roc_auc(pts);
  svg::Builder b(480.0, 480.0);
  svg::LinearScale xs{0.0, 1.0, 64.0, 440.0};
  svg::LinearScale ys{0.0, 1.0, 420.0, 48.0};
  svg::draw_frame(b, xs, ys, "ROC", "false positive rate",
                  "true positive rate");
  b.line(xs(0.0), ys(0.0), xs(1.0), ys(1.0), "#999999", 1.0, true);
  std::vector<std::pair<double, double>> line;
  for (const RocPoint& p : pts) line.emplace_back(xs(p.fpr), ys(p.tpr));
  b.polyline(line, "#d62728", 2.0);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "AUC = %.4f", auc);
  b.text(xs(0.62), ys(0.08), buf, 12.0);
  return b.finish();
}

// ---------------------------------------------------------------------------
// Code-usage histogram: paired bars (normal vs anomalous occurrence
// probability) per code, in gap-sorted order.

inline std::string code_histogram_svg(const std::vector<CodeUsage>& usage) {
  if (usage.empty()) throw DataError("no code usage entries");
  double top = 0.0;
  for (const CodeUsage& u : usage) {
    top = std::max(top, std::max(u.p_normal, u.p_anomalous));
  }
  if (top == 0.0) top = 1.0;

  svg::Builder b(720.0, 420.0);
  svg::LinearScale xs{0.0, static_cast<double>(usage.size()), 64.0, 680.0};
  svg::LinearScale ys{0.0, top * 1.05, 380.0, 40.0};
  svg::draw_frame(b, xs, ys, "Code occurrence probability by class", "code",
                  "probability");

  const std::string normal_color = "#1f77b4";
  const std::string anomalous_color = "#d62728";
  double slot = (xs.p1 - xs.p0) / static_cast<double>(usage.size());
  double bar = std::min(18.0, 0.4 * slot);
  std::size_t label_every =
      usage.size() <= 24 ? 1 : (usage.size() + 23) / 24;
  for (std::size_t i = 0; i < usage.size(); ++i) {
    double cx = xs(static_cast<double>(i) + 0.5);
    double yn = ys(usage[i].p_normal);
    double ya = ys(usage[i].p_anomalous);
    b.rect(cx - bar, yn, bar, ys.p0 - yn, normal_color);
    b.rect(cx, ya, bar, ys.p0 - ya, anomalous_color);
    if (i % label_every == 0) {
      b.text(cx, ys.p0 + 16.0, std::to_string(usage[i].code), 9.0, "middle");
    }
  }
  b.rect(560.0, 32.0, 10.0, 10.0, normal_color);
  b.text(574.0, 41.0, "normal", 10.0);
  b.rect(560.0, 48.0, 10.0, 10.0, anomalous_color);
  b.text(574.0, 57.0, "anomalous", 10.0);
  return b.finish();
}

// ---------------------------------------------------------------------------
// Summary of a run: final losses, best validation total, score statistics,
// and the gap-sorted code table. Rendered as JSON and as plain text.

inline nlohmann::json report_summary_json(const CsvTable& log,
                                          const ScoreSet& scores,
                                          const std::vector<CodeUsage>& usage) {
  if (log.rows.empty()) throw DataError("training log has no rows");
  nlohmann::json j;
  j["steps"] = log.rows.size();
  j["epochs"] = static_cast<std::size_t>(log.rows.back()[log.column("epoch")]);
  nlohmann::json fin;
  for (std::size_t i = 0; i < log.header.size(); ++i) {
    const std::string& h = log.header[i];
    if (h == "epoch" || h == "step" || h == "val_total") continue;
    fin[h] = log.rows.back()[i];
  }
  j["final"] = fin;
  std::size_t vc = log.column("val_total");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : log.rows) {
    if (std::isfinite(r[vc])) best = std::min(best, r[vc]);
  }
  if (std::isfinite(best)) j["best_val_total"] = best;

  nlohmann::json sj;
  sj["n"] = scores.scores.size();
  std::size_t np = 0;
  for (int y : scores.labels) np += static_cast<std::size_t>(y);
  sj["positives"] = np;
  if (np > 0 && np < scores.labels.size()) {
    sj["auc"] = roc_auc(roc_points(scores.scores, scores.labels));
  }
  j["scores"] = sj;

  if (!usage.empty()) {
    nlohmann::json codes = nlohmann::json::array();
    for (const CodeUsage& u : usage) {
      codes.push_back({{"code", u.code},
                       {"p_normal", u.p_normal},
                       {"p_anomalous", u.p_anomalous},
                       {"gap", u.gap}});
    }
    j["codes"] = codes;
  }
  return j;
}

inline std::string report_summary_text(const nlohmann::json& j) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "steps %zu  epochs %zu\n",
                j.at("steps").get<std::size_t>(),
                j.at("epochs").get<std::size_t>());
  out += buf;
  for (const auto& [k, v] : j.at("final").items()) {
    std::snprintf(buf, sizeof(buf), "final %-12s %.6g\n", k.c_str(),
                  v.get<double>());
    out += buf;
  }
  if (j.contains("best_val_total")) {
    std::snprintf(buf, sizeof(buf), "best val_total     %.6g\n",
                  j.at("best_val_total").get<double>());
    out += buf;
  }
  const auto& sj = j.at("scores");
  std::snprintf(buf, sizeof(buf), "scores n=%zu positives=%zu",
                sj.at("n").get<std::size_t>(),
                sj.at("positives").get<std::size_t>());
  out += buf;
  if (sj.contains("auc")) {
    std::snprintf(buf, sizeof(buf), " auc=%.6f", sj.at("auc").get<double>());
    out += buf;
  }
  out += "\n";
  if (j.contains("codes")) {
    out += "code   p_normal   p_anomalous   gap\n";
    for (const auto& c : j.at("codes")) {
      std::snprintf(buf, sizeof(buf), "%-6zu %- 9.4f  %- 11.4f   %- 8.4f\n",
                    c.at("code").get<std::size_t>(),
                    c.at("p_normal").get<double>(),
                    c.at("p_anomalous").get<double>(),
                    c.at("gap").get<double>());
      out += buf;
    }
  }
  return out;
}

}  // namespace mtsjepa
