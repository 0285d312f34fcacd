#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "wpcl/experiment.hpp"
#include "wpcl/serialize.hpp"

#include <json.hpp>

using namespace wpcl;
using nlohmann::json;
using wpcl_test::TempDir;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the installed CLI binary inside `workdir` and captures both streams.
CmdResult run_cli(const std::string& workdir, const std::string& args) {
  const std::string out_path = workdir + "/.stdout";
  const std::string err_path = workdir + "/.stderr";
  const std::string cmd = "cd " + workdir + " && " + WPCL_CLI_PATH + " " + args + " >" +
                          out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  CmdResult r;
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  r.out = file_exists(out_path) ? read_file(out_path) : "";
  r.err = file_exists(err_path) ? read_file(err_path) : "";
  return r;
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset.seed = 5;
  cfg.dataset.train_envs = 2;
  cfg.dataset.unseen_envs = 1;
  cfg.dataset.train_episodes_per_env = 3;
  cfg.dataset.val_seen_episodes_per_env = 2;
  cfg.dataset.val_unseen_episodes_per_env = 2;
  cfg.dataset.env.width = 8;
  cfg.dataset.env.height = 8;
  cfg.dataset.env.num_objects = 4;
  cfg.dataset.env.wall_density = 0.1;
  cfg.dataset.episode.min_path_len = 2;
  cfg.dataset.episode.max_path_len = 5;
  cfg.model.backbone.d0 = 10;
  cfg.model.backbone.noise_sigma = 0.1;
  cfg.model.head.in_dim = 10;
  cfg.model.head.out_dim = 12;
  cfg.model.head.lambda = 0.25;
  cfg.model.policy.embed_dim = 5;
  cfg.model.policy.hidden_dim = 7;
  cfg.model.policy.max_tokens = 8;
  cfg.train.stage1_iters = 4;
  cfg.train.stage2_iters = 2;
  cfg.train.lr = 0.1;
  cfg.train.eval_interval = 2;
  cfg.train.step_cap = 8;
  cfg.train.tau = 0.5;
  cfg.train.K = 4;
  cfg.train.seed = 1;
  cfg.train.detector.miss_rate = 0.1;
  cfg.train.detector.spurious_rate = 0.1;
  cfg.eval.step_cap = 10;
  return cfg;
}

// Workspace with a tiny config.json already in place.
std::string prepare(const TempDir& tmp) {
  atomic_write_file(tmp.file("config.json"), config_to_json(tiny_config()));
  return tmp.path();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) {
    if (c == '\n') ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("version and argument parsing") {
  TempDir tmp;
  const std::string ws = prepare(tmp);

  CmdResult r = run_cli(ws, "--version");
  CHECK(r.exit_code == 0);
  CHECK(r.out == "0.1.0\n");

  r = run_cli(ws, "");
  CHECK(r.exit_code == 1);

  r = run_cli(ws, "frobnicate");
  CHECK(r.exit_code == 1);

  r = run_cli(ws, "eval --dataset data");  // --checkpoint is required
  CHECK(r.exit_code == 1);
}

TEST_CASE("config errors exit with code 1") {
  TempDir tmp;
  const std::string ws = prepare(tmp);

  CmdResult r = run_cli(ws, "gen-data --config missing.json --out data");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("config file not found") != std::string::npos);

  atomic_write_file(tmp.file("broken.json"), "{nope");
  r = run_cli(ws, "gen-data --config broken.json --out data");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("not valid JSON") != std::string::npos);

  r = run_cli(ws, "gen-data --config config.json --set dataset.bogus=1 --out data");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("unknown config key") != std::string::npos);

  r = run_cli(ws, "gen-data --config config.json --set =3 --out data");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("--set expects") != std::string::npos);

  r = run_cli(ws, "train --config config.json --dataset nowhere --run runs/x");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("dataset file not found") != std::string::npos);
}

TEST_CASE("the pipeline runs end to end through the CLI") {
  TempDir tmp;
  const std::string ws = prepare(tmp);

  // gen-data
  CmdResult r = run_cli(ws, "gen-data --config config.json --out data");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out == "dataset written to data\n");
  CHECK(file_exists(tmp.file("data/dataset.json")));
  CHECK(file_exists(tmp.file("data/manifest.json")));

  // --set overrides reach the persisted config
  r = run_cli(ws, "gen-data --config config.json --set dataset.seed=9 --out data9");
  REQUIRE(r.exit_code == 0);
  const json persisted = json::parse(read_file(tmp.file("data9/config.json")));
  CHECK(persisted["dataset"]["seed"] == 9);
  CHECK(read_file(tmp.file("data9/dataset.json")) != read_file(tmp.file("data/dataset.json")));

  // detect (oracle)
  r = run_cli(ws, "detect --config config.json --dataset data");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("observations=") != std::string::npos);
  CHECK(r.out.find("requests=0") != std::string::npos);
  CHECK(r.out.find("failures=0") != std::string::npos);
  CHECK(file_exists(tmp.file("data/detections/detect_train.jsonl")));
  CHECK(file_exists(tmp.file("data/detections/detect_val_seen.jsonl")));
  CHECK(file_exists(tmp.file("data/detections/detect_val_unseen.jsonl")));

  // train
  r = run_cli(ws, "train --config config.json --dataset data --run runs/a");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("checkpoint: runs/a/checkpoint.json") != std::string::npos);
  CHECK(r.out.find("log rows: 6") != std::string::npos);
  CHECK(r.out.find("best val SPL ") != std::string::npos);
  CHECK(file_exists(tmp.file("runs/a/checkpoint.json")));
  CHECK(file_exists(tmp.file("runs/a/train_log.csv")));
  CHECK(load_manifest(tmp.file("runs/a/manifest.json")).status == "ok");

  // eval, default splits
  r = run_cli(ws, "eval --config config.json --checkpoint runs/a/checkpoint.json"
                  " --dataset data --out evalout");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.rfind("split,seed,TL,NE,SR,SPL,OSR\n", 0) == 0);
  CHECK(count_lines(r.out) == 3);  // header + val_seen + val_unseen
  CHECK(r.out.find("val_seen,0,") != std::string::npos);
  CHECK(r.out.find("val_unseen,0,") != std::string::npos);
  CHECK(read_file(tmp.file("evalout/eval.csv")) == r.out);

  // eval, one split with per-episode rows
  r = run_cli(ws, "eval --config config.json --checkpoint runs/a/checkpoint.json"
                  " --dataset data --split val_seen --out evalsplit --per-episode");
  REQUIRE(r.exit_code == 0);
  CHECK(count_lines(r.out) == 2);
  const std::string episodes = read_file(tmp.file("evalsplit/eval_episodes.csv"));
  CHECK(episodes.rfind("split,seed,episode,TL,NE,SR,SPL,OSR\n", 0) == 0);
  CHECK(count_lines(episodes) == 5);  // header + 4 val_seen episodes

  // eval against a missing checkpoint
  r = run_cli(ws, "eval --config config.json --checkpoint nope.json --dataset data --out x");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("checkpoint not found") != std::string::npos);

  // report on the train run
  r = run_cli(ws, "report --run runs/a");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("# Run report") != std::string::npos);
  CHECK(r.out.find("| status | ok |") != std::string::npos);
  CHECK(r.out.find("## train_log.csv") != std::string::npos);
  CHECK(file_exists(tmp.file("runs/a/report.md")));
}

TEST_CASE("detect reports failures with exit code 2") {
  TempDir tmp;
  const std::string ws = prepare(tmp);
  REQUIRE(run_cli(ws, "gen-data --config config.json --out data").exit_code == 0);

  // Nothing listens on port 9; every observation fails fast.
  const CmdResult r = run_cli(
      ws, "detect --config config.json --dataset data --backend vlm --out dets"
          " --set vlm.base_url=http://127.0.0.1:9/v1 --set vlm.max_retries=0"
          " --set vlm.backoff_base_seconds=0.001");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("failed observations") != std::string::npos);
  CHECK(r.out.find("failures=") != std::string::npos);

  const CmdResult bad = run_cli(ws, "detect --config config.json --dataset data --backend maskrcnn");
  CHECK(bad.exit_code == 1);
  CHECK(bad.err.find("backend") != std::string::npos);
}

TEST_CASE("ablate exit codes distinguish clean, partial, and invalid sweeps") {
  TempDir tmp;
  const std::string ws = prepare(tmp);
  REQUIRE(run_cli(ws, "gen-data --config config.json --out data").exit_code == 0);

  CmdResult r = run_cli(ws, "ablate --config config.json --axis alpha --values 0 0.5"
                            " --run runs/sweep");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("rows: 2, failures: 0") != std::string::npos);
  CHECK(file_exists(tmp.file("runs/sweep/ablate_alpha.csv")));
  CHECK(file_exists(tmp.file("runs/sweep/ablate_alpha.svg")));

  // 0.4 rounds to m=0, which every cell rejects; the sweep itself survives.
  r = run_cli(ws, "ablate --config config.json --axis m --values 1 0.4 --run runs/partial");
  CHECK(r.exit_code == 3);
  CHECK(r.out.find("rows: 2, failures: 1") != std::string::npos);
  CHECK(load_manifest(tmp.file("runs/partial/manifest.json")).status == "failed");

  // An invalid axis or leading value never starts the sweep.
  r = run_cli(ws, "ablate --config config.json --axis beta --values 1 --run runs/x1");
  CHECK(r.exit_code == 1);
  r = run_cli(ws, "ablate --config config.json --axis m --values 0.4 1 --run runs/x2");
  CHECK(r.exit_code == 1);

  const CmdResult rep = run_cli(ws, "report --run runs/sweep");
  CHECK(rep.exit_code == 0);
  CHECK(rep.out.find("## ablate_alpha.csv") != std::string::npos);
}
