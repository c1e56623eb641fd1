// Command-line surface for the pipeline: synthetic data generation,
// pre-training, the downstream early-warning protocol, the certificate suite,
// and static report rendering.
//
// Exit codes: 0 ok, 2 usage or data error, 3 incompatibility, 4 certificate
// failure, 5 numeric abort.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtsjepa/checkpoint.hpp"
#include "mtsjepa/config.hpp"
#include "mtsjepa/downstream.hpp"
#include "mtsjepa/model_certificates.hpp"
#include "mtsjepa/report.hpp"
#include "mtsjepa/theory.hpp"
#include "mtsjepa/trainer.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kIncompatible = 3;
constexpr int kCertFailure = 4;
constexpr int kNumericAbort = 5;

struct ConfigArgs {
  std::string preset = "desk";
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--preset", args.preset, "named preset (desk, paper-default)")
      ->capture_default_str();
  cmd->add_option("--config", args.config_path,
                  "key = value config file applied over the preset");
  cmd->add_option("--set", args.overrides,
                  "key=value override applied last; repeatable");
}

// Precedence: preset < config file < --set overrides.
mtsjepa::TrainConfig resolve_config(const ConfigArgs& args) {
  mtsjepa::TrainConfig cfg = mtsjepa::preset_config(args.preset);
  if (!args.config_path.empty()) {
    cfg = mtsjepa::load_config_file(args.config_path, cfg);
  }
  for (const std::string& kv : args.overrides) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw mtsjepa::ConfigError("--set expects key=value, got: " + kv);
    }
    mtsjepa::apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  if (dir.back() == '/') return dir + name;
  return dir + "/" + name;
}

int cmd_synth(std::uint64_t seed, std::size_t t, std::size_t v, double rate,
              const std::string& out) {
  mtsjepa::SynthConfig sc;
  sc.anomaly_rate = rate;
  mtsjepa::RawSeries s = mtsjepa::synth_regime_series(seed, t, v, sc);
  mtsjepa::write_series_csv(out, s);
  std::printf("wrote %s (t=%zu v=%zu)\n", out.c_str(), s.t, s.v);
  return kOk;
}

int cmd_pretrain(const ConfigArgs& cargs, const std::string& data,
                 const std::string& out) {
  mtsjepa::TrainConfig cfg = resolve_config(cargs);
  mtsjepa::RawSeries raw = mtsjepa::read_series_csv(data);
  mtsjepa::PreparedData prepared = mtsjepa::prepare_training_data(raw, cfg);
  mtsjepa::FitResult fit = mtsjepa::fit(cfg, prepared);

  mtsjepa::save_checkpoint(join_path(out, "checkpoint.bin"), fit.state,
                           prepared.removed_channels);
  mtsjepa::atomic_write_file(join_path(out, "train_log.csv"),
                             mtsjepa::training_log_csv(fit.log));

  mtsjepa::CollapseDiagnostics diag = mtsjepa::collapse_monitor(
      fit.state.model, prepared, prepared.val_units);
  nlohmann::json summary;
  summary["config"] = mtsjepa::train_config_to_json(cfg);
  summary["removed_channels"] = prepared.removed_channels;
  summary["epochs_run"] = fit.epochs_run;
  summary["best_epoch"] = fit.best_epoch;
  summary["best_val_total"] = fit.best_val;
  summary["trace_cov"] = diag.trace_cov;
  summary["batch_entropy"] = diag.batch_entropy;
  summary["code_usage"] = diag.usage;
  mtsjepa::atomic_write_file(join_path(out, "train_summary.json"),
                             summary.dump(2) + "\n");
  std::printf("trained %zu epochs (best %zu, val %.6g); wrote %s\n",
              fit.epochs_run, fit.best_epoch, fit.best_val,
              join_path(out, "checkpoint.bin").c_str());
  return kOk;
}

int cmd_downstream(const std::string& checkpoint, const std::string& data,
                   const std::string& out, std::uint64_t seed) {
  mtsjepa::LoadedCheckpoint loaded = mtsjepa::load_checkpoint(checkpoint);
  if (loaded.state.model.cfg.codebook_bypass) {
    std::fprintf(stderr,
                 "error: checkpoint bypasses the codebook; the protocol needs "
                 "code distributions\n");
    return kIncompatible;
  }
  mtsjepa::RawSeries raw = mtsjepa::read_series_csv(data);
  mtsjepa::DownstreamConfig dcfg;
  dcfg.seed = seed;
  mtsjepa::ProtocolResult res = mtsjepa::run_protocol(
      loaded.state.model, loaded.removed_channels, raw, dcfg);

  nlohmann::json metrics;
  metrics["split"] = {{"train", res.split.n_train},
                      {"val", res.split.n_val},
                      {"test", res.split.n_test}};
  metrics["val"] = mtsjepa::metrics_report_json(res.val);
  metrics["test"] = mtsjepa::metrics_report_json(res.test);
  mtsjepa::atomic_write_file(join_path(out, "metrics.json"),
                             metrics.dump(2) + "\n");
  mtsjepa::atomic_write_file(join_path(out, "scores.csv"),
                             mtsjepa::scores_csv(res.test_scores));
  mtsjepa::atomic_write_file(join_path(out, "codes.csv"),
                             mtsjepa::codes_csv(res.test_codes));
  std::printf("test f1 %.6g", res.test.f1);
  if (res.test.has_auc) std::printf(" auc %.6g", res.test.auc);
  std::printf("; wrote %s\n", join_path(out, "metrics.json").c_str());
  return kOk;
}

int cmd_theory_check(const std::string& checkpoint, std::size_t trials,
                     std::uint64_t seed, const std::string& out) {
  mtsjepa::CertificateReport rep =
      mtsjepa::run_synthetic_certificates(trials, seed);
  if (!checkpoint.empty()) {
    mtsjepa::LoadedCheckpoint loaded = mtsjepa::load_checkpoint(checkpoint);
    const mtsjepa::NetConfig& net = loaded.state.model.cfg;
    if (net.codebook_bypass) {
      std::fprintf(stderr,
                   "error: checkpoint bypasses the codebook; certificates "
                   "need code distributions\n");
      return kIncompatible;
    }
    std::size_t steps = 64;
    mtsjepa::SynthConfig sc;
    sc.anomaly_rate = 0.0;
    mtsjepa::RawSeries rollout = mtsjepa::synth_regime_series(
        seed, (steps + 2) * net.window_len(), 2, sc);
    mtsjepa::CertificateReport model_rep = mtsjepa::run_model_certificates(
        loaded.state.model, loaded.state.targets, rollout, steps);
    for (auto& row : model_rep.rows) rep.rows.push_back(row);
  }
  if (!out.empty()) {
    mtsjepa::atomic_write_file(
        out, mtsjepa::certificate_report_json(rep).dump(2) + "\n");
  }
  std::fputs(mtsjepa::certificate_report_table(rep).c_str(), stdout);
  if (!mtsjepa::all_pass(rep)) {
    std::fprintf(stderr, "error: certificate violation\n");
    return kCertFailure;
  }
  return kOk;
}

int cmd_report(const std::string& log_path, const std::string& scores_path,
               const std::string& codes_path, const std::string& out) {
  mtsjepa::CsvTable log =
      mtsjepa::parse_numeric_csv(mtsjepa::read_file(log_path));
  mtsjepa::ScoreSet scores =
      mtsjepa::parse_scores(mtsjepa::read_file(scores_path));
  std::vector<mtsjepa::CodeUsage> usage;
  if (!codes_path.empty()) {
    usage = mtsjepa::code_usage(
        mtsjepa::parse_codes(mtsjepa::read_file(codes_path)));
  }

  mtsjepa::atomic_write_file(join_path(out, "loss_curves.svg"),
                             mtsjepa::loss_curves_svg(log));
  bool pos = false, neg = false;
  for (int y : scores.labels) (y ? pos : neg) = true;
  if (pos && neg) {
    mtsjepa::atomic_write_file(
        join_path(out, "roc.svg"),
        mtsjepa::roc_svg(scores.scores, scores.labels));
  } else {
    std::fprintf(stderr,
                 "note: scores contain a single class; skipping roc.svg\n");
  }
  if (!usage.empty()) {
    mtsjepa::atomic_write_file(join_path(out, "code_histogram.svg"),
                               mtsjepa::code_histogram_svg(usage));
  }
  nlohmann::json summary = mtsjepa::report_summary_json(log, scores, usage);
  mtsjepa::atomic_write_file(join_path(out, "summary.json"),
                             summary.dump(2) + "\n");
  mtsjepa::atomic_write_file(join_path(out, "summary.txt"),
                             mtsjepa::report_summary_text(summary));
  std::printf("wrote report to %s\n", out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-resolution self-supervised anomaly prediction pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic series");
  std::uint64_t synth_seed = 0;
  std::size_t synth_t = 2000, synth_v = 3;
  double synth_rate = 0.10;
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "rng seed")->capture_default_str();
  synth->add_option("--t", synth_t, "number of time steps")
      ->capture_default_str();
  synth->add_option("--v", synth_v, "number of variables")
      ->capture_default_str();
  synth->add_option("--anomaly-rate", synth_rate,
                    "target fraction of anomalous steps")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "output CSV path")->required();

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "self-supervised pre-training");
  ConfigArgs pre_cfg;
  std::string pre_data, pre_out;
  add_config_options(pretrain, pre_cfg);
  pretrain->add_option("--data", pre_data, "training series CSV")->required();
  pretrain->add_option("--out", pre_out, "output directory")->required();

  // downstream
  auto* downstream =
      app.add_subcommand("downstream", "early-warning protocol on a checkpoint");
  std::string down_ckpt, down_data, down_out;
  std::uint64_t down_seed = 0;
  downstream->add_option("--checkpoint", down_ckpt, "checkpoint file")
      ->required();
  downstream->add_option("--data", down_data, "labeled series CSV")->required();
  downstream->add_option("--out", down_out, "output directory")->required();
  downstream->add_option("--seed", down_seed, "classifier seed")
      ->capture_default_str();

  // theory-check
  auto* theory =
      app.add_subcommand("theory-check", "run the certificate suite");
  std::string th_ckpt, th_out;
  std::size_t th_trials = 200;
  std::uint64_t th_seed = 0;
  theory->add_option("--checkpoint", th_ckpt,
                     "also measure certificates on this model's rollouts");
  theory->add_option("--trials", th_trials, "synthetic trials")
      ->capture_default_str();
  theory->add_option("--seed", th_seed, "rng seed")->capture_default_str();
  theory->add_option("--out", th_out, "certificate report JSON path");

  // report
  auto* report = app.add_subcommand("report", "render plots and summaries");
  std::string rep_log, rep_scores, rep_codes, rep_out;
  report->add_option("--log", rep_log, "training log CSV")->required();
  report->add_option("--scores", rep_scores, "scores CSV")->required();
  report->add_option("--codes", rep_codes, "codes CSV (optional)");
  report->add_option("--out", rep_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_seed, synth_t, synth_v, synth_rate, synth_out);
    }
    if (pretrain->parsed()) return cmd_pretrain(pre_cfg, pre_data, pre_out);
    if (downstream->parsed()) {
      return cmd_downstream(down_ckpt, down_data, down_out, down_seed);
    }
    if (theory->parsed()) {
      return cmd_theory_check(th_ckpt, th_trials, th_seed, th_out);
    }
    if (report->parsed()) {
      return cmd_report(rep_log, rep_scores, rep_codes, rep_out);
    }
  } catch (const mtsjepa::NumericError& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return kNumericAbort;
  } catch (const mtsjepa::CheckpointError& e) {
    std::fprintf(stderr, "incompatible checkpoint: %s\n", e.what());
    return kIncompatible;
  } catch (const mtsjepa::ShapeError& e) {
    std::fprintf(stderr, "incompatible shapes: %s\n", e.what());
    return kIncompatible;
  } catch (const mtsjepa::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const mtsjepa::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const mtsjepa::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
