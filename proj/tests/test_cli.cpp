#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "mtsjepa/checkpoint.hpp"
#include "mtsjepa/data.hpp"
#include "mtsjepa/report.hpp"

using namespace mtsjepa;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  std::string cmd = std::string(MTSJEPA_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  CliResult r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), p)) r.out += buf;
  int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

struct ScratchDir {
  fs::path path;

  ScratchDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("mtsjepa_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const {
    return (path / name).string();
  }
};

const std::string kTinyNet =
    "--set net.n_patches=2 --set net.patch_len=4 --set net.embed_dim=8 "
    "--set net.enc_layers=1 --set net.enc_heads=2 --set net.ff_mult=2 "
    "--set net.tok_hidden1=4 --set net.tok_hidden2=4 "
    "--set net.codebook_size=4 --set net.pred_width=8 "
    "--set net.pred_layers=1 --set net.pred_heads=2 --set net.dec_hidden=8 "
    "--set net.max_positions=4 --set max_epochs=2 "
    "--set selection_start_epoch=1 --set patience=2 --set window_stride=8 "
    "--set batch_size=64 --set seed=11";

}  // namespace

TEST_CASE("cli synth") {
  ScratchDir dir;

  SECTION("deterministic and correctly sized") {
    CliResult a =
        run_cli("synth --seed 7 --t 300 --v 2 --out " + (dir / "a.csv"));
    REQUIRE(a.code == 0);
    CliResult b =
        run_cli("synth --seed 7 --t 300 --v 2 --out " + (dir / "b.csv"));
    REQUIRE(b.code == 0);
    REQUIRE(read_file(dir / "a.csv") == read_file(dir / "b.csv"));
    RawSeries s = read_series_csv(dir / "a.csv");
    REQUIRE(s.t == 300);
    REQUIRE(s.v == 2);
    REQUIRE(s.labeled());
    CliResult c =
        run_cli("synth --seed 8 --t 300 --v 2 --out " + (dir / "c.csv"));
    REQUIRE(c.code == 0);
    REQUIRE(read_file(dir / "a.csv") != read_file(dir / "c.csv"));
  }

  SECTION("zero anomaly rate clears the label column") {
    CliResult r = run_cli("synth --seed 1 --t 200 --v 1 --anomaly-rate 0 --out " +
                          (dir / "z.csv"));
    REQUIRE(r.code == 0);
    RawSeries s = read_series_csv(dir / "z.csv");
    for (std::uint8_t l : s.labels) REQUIRE(l == 0);
  }

  SECTION("unwritable path exits 2") {
    atomic_write_file(dir / "blocker", "x");
    CliResult r = run_cli("synth --seed 1 --t 50 --v 1 --out " +
                          (dir / "blocker") + "/a.csv");
    REQUIRE(r.code == 2);
  }

  SECTION("usage errors exit 2") {
    REQUIRE(run_cli("synth --t 50 --v 1").code == 2);        // missing --out
    REQUIRE(run_cli("synth --bogus 1 --out x.csv").code == 2);
    REQUIRE(run_cli("").code == 2);                          // no subcommand
    REQUIRE(run_cli("nonsense").code == 2);
  }
}

TEST_CASE("cli pretrain, downstream, theory-check, report round trip") {
  ScratchDir dir;
  std::string data = dir / "train.csv";
  REQUIRE(run_cli("synth --seed 3 --t 800 --v 2 --anomaly-rate 0.1 --out " +
                  data)
              .code == 0);

  // Pre-train a tiny model.
  std::string run_dir = dir / "run";
  CliResult pre =
      run_cli("pretrain " + kTinyNet + " --data " + data + " --out " + run_dir);
  INFO(pre.out);
  REQUIRE(pre.code == 0);
  std::string ckpt = run_dir + "/checkpoint.bin";
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(run_dir + "/train_log.csv"));
  REQUIRE(fs::exists(run_dir + "/train_summary.json"));

  CsvTable log = parse_numeric_csv(read_file(run_dir + "/train_log.csv"));
  REQUIRE(log.rows.size() >= 2);
  REQUIRE(log.column("total") == 10);
  nlohmann::json summary =
      nlohmann::json::parse(read_file(run_dir + "/train_summary.json"));
  REQUIRE(summary["epochs_run"] == 2);
  REQUIRE(summary["code_usage"].size() == 4);

  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  REQUIRE(loaded.state.model.cfg.codebook_size == 4);

  // Downstream protocol.
  std::string down_dir = dir / "down";
  CliResult down = run_cli("downstream --checkpoint " + ckpt + " --data " +
                           data + " --out " + down_dir);
  INFO(down.out);
  REQUIRE(down.code == 0);
  nlohmann::json metrics =
      nlohmann::json::parse(read_file(down_dir + "/metrics.json"));
  for (const char* key : {"precision", "recall", "f1", "threshold", "n"}) {
    REQUIRE(metrics["test"].contains(key));
    REQUIRE(metrics["val"].contains(key));
  }
  REQUIRE(metrics["split"]["train"].get<std::size_t>() > 0);
  ScoreSet scores = parse_scores(read_file(down_dir + "/scores.csv"));
  REQUIRE(scores.scores.size() == metrics["test"]["n"].get<std::size_t>());
  CodeSet codes = parse_codes(read_file(down_dir + "/codes.csv"));
  REQUIRE(codes.codes.size() == scores.scores.size() * 2 * 2);  // v * patches

  // Rerun is bit-identical.
  std::string down2 = dir / "down2";
  REQUIRE(run_cli("downstream --checkpoint " + ckpt + " --data " + data +
                  " --out " + down2)
              .code == 0);
  REQUIRE(read_file(down2 + "/metrics.json") ==
          read_file(down_dir + "/metrics.json"));
  REQUIRE(read_file(down2 + "/scores.csv") ==
          read_file(down_dir + "/scores.csv"));

  // Certificates on the trained model.
  std::string cert_path = dir / "cert.json";
  CliResult th = run_cli("theory-check --checkpoint " + ckpt +
                         " --trials 20 --out " + cert_path);
  INFO(th.out);
  REQUIRE(th.code == 0);
  nlohmann::json cert = nlohmann::json::parse(read_file(cert_path));
  REQUIRE(cert["all_pass"] == true);
  bool saw_model_row = false;
  for (const auto& row : cert["certificates"]) {
    if (row["name"].get<std::string>().rfind("model-", 0) == 0) {
      saw_model_row = true;
    }
  }
  REQUIRE(saw_model_row);
  REQUIRE(th.out.find("model-stability") != std::string::npos);

  // Static report.
  std::string rep_dir = dir / "report";
  CliResult rep = run_cli("report --log " + run_dir + "/train_log.csv" +
                          " --scores " + down_dir + "/scores.csv" +
                          " --codes " + down_dir + "/codes.csv" + " --out " +
                          rep_dir);
  INFO(rep.out);
  REQUIRE(rep.code == 0);
  REQUIRE(fs::exists(rep_dir + "/loss_curves.svg"));
  REQUIRE(fs::exists(rep_dir + "/code_histogram.svg"));
  REQUIRE(fs::exists(rep_dir + "/summary.json"));
  REQUIRE(fs::exists(rep_dir + "/summary.txt"));
  bool pos = false, neg = false;
  for (int y : scores.labels) (y ? pos : neg) = true;
  REQUIRE(fs::exists(rep_dir + "/roc.svg") == (pos && neg));
  nlohmann::json rs = nlohmann::json::parse(read_file(rep_dir + "/summary.json"));
  REQUIRE(rs["scores"]["n"] == scores.scores.size());
}

TEST_CASE("cli pretrain failure modes") {
  ScratchDir dir;

  SECTION("missing data exits 2") {
    CliResult r = run_cli("pretrain --data " + (dir / "absent.csv") +
                          " --out " + (dir / "o"));
    REQUIRE(r.code == 2);
    REQUIRE(r.out.find("cannot open") != std::string::npos);
  }

  SECTION("paper-default preset parses before data loading") {
    CliResult r = run_cli("pretrain --preset paper-default --data " +
                          (dir / "absent.csv") + " --out " + (dir / "o"));
    REQUIRE(r.code == 2);
    REQUIRE(r.out.find("cannot open") != std::string::npos);
    REQUIRE(r.out.find("preset") == std::string::npos);
  }

  SECTION("unknown preset and unknown key exit 2") {
    CliResult a = run_cli("pretrain --preset bogus --data x --out y");
    REQUIRE(a.code == 2);
    REQUIRE(a.out.find("unknown preset") != std::string::npos);
    CliResult b = run_cli("pretrain --set nope=1 --data x --out y");
    REQUIRE(b.code == 2);
    REQUIRE(b.out.find("unknown key") != std::string::npos);
    CliResult c = run_cli("pretrain --set junk --data x --out y");
    REQUIRE(c.code == 2);
  }
}

TEST_CASE("cli downstream and theory-check failure modes") {
  ScratchDir dir;

  SECTION("corrupt checkpoint exits 3") {
    atomic_write_file(dir / "junk.bin", "not a checkpoint");
    std::string data = dir / "d.csv";
    REQUIRE(run_cli("synth --seed 1 --t 200 --v 1 --out " + data).code == 0);
    CliResult r = run_cli("downstream --checkpoint " + (dir / "junk.bin") +
                          " --data " + data + " --out " + (dir / "o"));
    REQUIRE(r.code == 3);
  }

  SECTION("bypass checkpoint is incompatible with downstream and certificates") {
    std::string data = dir / "d.csv";
    REQUIRE(run_cli("synth --seed 2 --t 400 --v 1 --out " + data).code == 0);
    std::string run_dir = dir / "bp";
    CliResult pre = run_cli("pretrain " + kTinyNet +
                            " --set net.codebook_bypass=true --data " + data +
                            " --out " + run_dir);
    INFO(pre.out);
    REQUIRE(pre.code == 0);
    std::string ckpt = run_dir + "/checkpoint.bin";
    CliResult down = run_cli("downstream --checkpoint " + ckpt + " --data " +
                             data + " --out " + (dir / "o"));
    REQUIRE(down.code == 3);
    CliResult th = run_cli("theory-check --checkpoint " + ckpt + " --trials 1");
    REQUIRE(th.code == 3);
  }

  SECTION("unlabeled data exits 2") {
    SynthConfig sc;
    RawSeries s = synth_regime_series(4, 200, 1, sc);
    s.labels.clear();
    write_series_csv(dir / "nolabel.csv", s);
    std::string data = dir / "l.csv";
    REQUIRE(run_cli("synth --seed 5 --t 400 --v 1 --out " + data).code == 0);
    std::string run_dir = dir / "m";
    REQUIRE(run_cli("pretrain " + kTinyNet + " --data " + data + " --out " +
                    run_dir)
                .code == 0);
    CliResult r = run_cli("downstream --checkpoint " + run_dir +
                          "/checkpoint.bin --data " + (dir / "nolabel.csv") +
                          " --out " + (dir / "o"));
    REQUIRE(r.code == 2);
  }

  SECTION("zero trials give an empty passing report") {
    std::string out = dir / "cert.json";
    CliResult r = run_cli("theory-check --trials 0 --out " + out);
    REQUIRE(r.code == 0);
    nlohmann::json j = nlohmann::json::parse(read_file(out));
    REQUIRE(j["all_pass"] == true);
    REQUIRE(j["certificates"].empty());
  }

  SECTION("default synthetic suite passes") {
    CliResult r = run_cli("theory-check --trials 50");
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("FAIL") == std::string::npos);
    REQUIRE(r.out.find("pass") != std::string::npos);
  }
}

TEST_CASE("cli report failure modes") {
  ScratchDir dir;
  atomic_write_file(dir / "log.csv",
                    "epoch,step,kl_fine,mse_fine,kl_coarse,emb,com,"
                    "ent_sample,ent_batch,rec,total,val_total\n"
                    "1,1,1,1,1,1,1,1,1,1,9,\n");

  SECTION("empty scores exit 2") {
    atomic_write_file(dir / "scores.csv", "window_start,score,label\n");
    CliResult r = run_cli("report --log " + (dir / "log.csv") + " --scores " +
                          (dir / "scores.csv") + " --out " + (dir / "o"));
    REQUIRE(r.code == 2);
  }

  SECTION("single-class scores still render without roc") {
    atomic_write_file(dir / "scores.csv",
                      "window_start,score,label\n0,0.5,1\n8,0.25,1\n");
    CliResult r = run_cli("report --log " + (dir / "log.csv") + " --scores " +
                          (dir / "scores.csv") + " --out " + (dir / "o"));
    REQUIRE(r.code == 0);
    REQUIRE(fs::exists(dir / "o/loss_curves.svg"));
    REQUIRE_FALSE(fs::exists(dir / "o/roc.svg"));
  }
}
