#ifndef WPCL_EXPERIMENT_HPP_
#define WPCL_EXPERIMENT_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wpcl/detector.hpp"
#include "wpcl/envsim.hpp"
#include "wpcl/metrics.hpp"
#include "wpcl/nav.hpp"
#include "wpcl/vlmclient.hpp"

namespace wpcl {

struct DatasetConfig {
  std::uint64_t seed = 0;
  int train_envs = 3;
  int unseen_envs = 2;
  int train_episodes_per_env = 10;
  int val_seen_episodes_per_env = 4;
  int val_unseen_episodes_per_env = 4;
  EnvConfig env;          // per-env seeds derived from `seed`
  EpisodeConfig episode;
  ObservationSpec obs;
};

// Three-split benchmark. val_seen shares environments with train (fresh
// episodes); val_unseen uses fresh environment seeds.
struct Dataset {
  std::vector<std::string> vocab;
  ObservationSpec obs;
  std::vector<std::shared_ptr<const GridEnvironment>> envs;
  int num_train_envs = 0;  // envs[0..n) train/seen, the rest unseen
  std::map<std::string, std::vector<Episode>> splits;
};

Dataset generate_dataset(const DatasetConfig& cfg);
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::string detect_backend = "oracle";  // "oracle" | "vlm"
  EndpointConfig vlm;
  std::vector<std::uint64_t> seeds{0};  // per-seed replicates for eval/ablate
};

ExperimentConfig default_experiment_config();

// Canonical JSON round-trip; load rejects unknown keys. api_key_env_var is
// the only env-interpolated secret reference (by name, never by value).
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

struct RunManifest {
  std::string config_hash;
  std::string status = "running";  // running | ok | failed
  std::string error;
  double wall_seconds = 0.0;
  std::map<std::string, double> stage_seconds;
  std::map<std::string, std::string> artifacts;
  std::string version;
};

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Pipeline steps backing the CLI subcommands.

void run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);

struct DetectSummary {
  int observations = 0;
  int requests = 0;  // network calls (vlm backend)
  int failures = 0;
};

// Per-split JSONL detection artifacts keyed by (env seed, frame index, pose).
DetectSummary run_detect(const ExperimentConfig& cfg, const std::string& dataset_dir,
                         const std::string& backend, const std::string& out_dir);

void save_checkpoint(const PolicyParams& policy, const Head& head, const ModelConfig& model,
                     const std::string& path);

struct Checkpoint {
  PolicyParams policy;
  Head head;
  ModelConfig model;
};
Checkpoint load_checkpoint(const std::string& path);

struct TrainOutcome {
  TrainResult result;
  std::string checkpoint_path;
  std::string log_path;
  std::string manifest_path;
};

TrainOutcome run_train(const ExperimentConfig& cfg, const std::string& dataset_dir,
                       const std::string& run_dir);

struct EvalOutcome {
  MetricsSummary summary;
  std::vector<EpisodeResult> results;
  std::string csv;  // (split, seed, TL, NE, SR, SPL, OSR)
};

EvalOutcome run_eval(const ExperimentConfig& cfg, const Checkpoint& ckpt,
                     const Dataset& dataset, const std::string& split, std::uint64_t seed);

// One (value, seed) grid cell of an ablation sweep.
struct AblationRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string split;
  MetricsSummary summary;
  bool failed = false;
  std::string error;
};

struct AblateOutcome {
  std::vector<AblationRow> rows;
  std::string csv_path;
  std::string svg_path;
  int failures = 0;
};

extern const std::vector<std::string> kAblationAxes;  // alpha lambda m noise tau K

ExperimentConfig apply_axis(ExperimentConfig cfg, const std::string& axis, double value);

AblateOutcome run_ablate(const ExperimentConfig& cfg, const std::string& axis,
                         const std::vector<double>& values, const std::string& run_dir);

// Self-contained line plot, one polyline per series.
std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::vector<double>& xs,
                          const std::map<std::string, std::vector<double>>& series);

// Markdown digest of a run directory (manifest, metrics CSVs, ablations).
std::string write_report(const std::string& run_dir);

}  // namespace wpcl

#endif  // WPCL_EXPERIMENT_HPP_
