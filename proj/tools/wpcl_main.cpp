#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wpcl/experiment.hpp"
#include "wpcl/serialize.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitPartialAblation = 3;

// Applies "--set path.to.key=value" overrides onto the raw config document so
// every ExperimentConfig field stays reachable from the command line.
nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw wpcl::ConfigError("--set expects key.path=value, got \"" + s + "\"");
    }
    const std::string path = s.substr(0, eq);
    const std::string raw = s.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // bare strings need no quotes

    nlohmann::json* node = &doc;
    std::size_t begin = 0;
    while (true) {
      const std::size_t dot = path.find('.', begin);
      const std::string key = path.substr(begin, dot - begin);
      if (key.empty()) throw wpcl::ConfigError("--set path has an empty segment: " + path);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      begin = dot + 1;
    }
  }
  return doc;
}

wpcl::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  nlohmann::json doc;
  if (path.empty()) {
    doc = nlohmann::json::parse(wpcl::config_to_json(wpcl::default_experiment_config()));
  } else {
    if (!wpcl::file_exists(path)) throw wpcl::ConfigError("config file not found: " + path);
    doc = nlohmann::json::parse(wpcl::read_file(path), nullptr, false);
    if (doc.is_discarded()) throw wpcl::ConfigError("config is not valid JSON: " + path);
  }
  return wpcl::config_from_json(apply_overrides(std::move(doc), sets).dump());
}

int run_eval_command(const wpcl::ExperimentConfig& cfg, const std::string& ckpt_path,
                     const std::string& dataset_dir, std::vector<std::string> splits,
                     const std::string& out_dir, bool per_episode) {
  wpcl::Checkpoint ckpt = wpcl::load_checkpoint(ckpt_path);
  wpcl::Dataset ds = wpcl::load_dataset(dataset_dir);
  if (splits.empty()) splits = {"val_seen", "val_unseen"};

  std::vector<std::vector<std::string>> rows;
  std::vector<std::vector<std::string>> episode_rows;
  for (const std::string& split : splits) {
    for (std::uint64_t seed : cfg.seeds) {
      wpcl::EvalOutcome out = wpcl::run_eval(cfg, ckpt, ds, split, seed);
      rows.push_back({split, std::to_string(seed), wpcl::format_double(out.summary.tl),
                      wpcl::format_double(out.summary.ne), wpcl::format_double(out.summary.sr),
                      wpcl::format_double(out.summary.spl),
                      wpcl::format_double(out.summary.osr)});
      if (!per_episode) continue;
      for (std::size_t i = 0; i < out.results.size(); ++i) {
        const wpcl::EpisodeResult& r = out.results[i];
        episode_rows.push_back(
            {split, std::to_string(seed), std::to_string(i),
             wpcl::format_double(wpcl::trajectory_length(r)),
             wpcl::format_double(wpcl::nav_error(r)), wpcl::success(r) ? "1" : "0",
             wpcl::format_double(wpcl::spl_term(r)), wpcl::oracle_success(r) ? "1" : "0"});
      }
    }
  }

  const std::string csv =
      wpcl::to_csv({"split", "seed", "TL", "NE", "SR", "SPL", "OSR"}, rows);
  wpcl::ensure_dir(out_dir);
  wpcl::atomic_write_file(out_dir + "/eval.csv", csv);
  if (per_episode) {
    wpcl::atomic_write_file(
        out_dir + "/eval_episodes.csv",
        wpcl::to_csv({"split", "seed", "episode", "TL", "NE", "SR", "SPL", "OSR"},
                     episode_rows));
  }
  std::cout << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grid-world laboratory for weakly-supervised contrastive navigation"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand name
  app.set_version_flag("--version", "0.1.0");

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "experiment config JSON (defaults when omitted)");
  app.add_option("--set", overrides, "override a config field, e.g. --set train.alpha=0.3");

  auto* gen = app.add_subcommand("gen-data", "generate environments and episodes");
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "output dataset directory");

  auto* det = app.add_subcommand("detect", "run object detection over expert histories");
  std::string det_dataset = "data", det_backend, det_out;
  det->add_option("--dataset", det_dataset, "dataset directory");
  det->add_option("--backend", det_backend, "oracle or vlm (default: config)");
  det->add_option("--out", det_out, "artifact directory (default: <dataset>/detections)");

  auto* trn = app.add_subcommand("train", "two-stage policy training");
  std::string trn_dataset = "data", trn_run = "runs/train";
  trn->add_option("--dataset", trn_dataset, "dataset directory");
  trn->add_option("--run", trn_run, "run directory for checkpoint, log, manifest");

  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on dataset splits");
  std::string evl_ckpt, evl_dataset = "data", evl_out = ".";
  std::vector<std::string> evl_splits;
  bool evl_per_episode = false;
  evl->add_option("--checkpoint", evl_ckpt, "checkpoint JSON path")->required();
  evl->add_option("--dataset", evl_dataset, "dataset directory");
  evl->add_option("--split", evl_splits, "split name (repeatable; default both val splits)");
  evl->add_option("--out", evl_out, "directory for eval.csv");
  evl->add_flag("--per-episode", evl_per_episode, "also write per-episode rows");

  auto* abl = app.add_subcommand("ablate", "sweep one axis, training per value x seed");
  std::string abl_axis, abl_run = "runs/ablate";
  std::vector<double> abl_values;
  abl->add_option("--axis", abl_axis, "one of alpha, lambda, m, noise, tau, K")->required();
  abl->add_option("--values", abl_values, "axis values")->required()->expected(-1);
  abl->add_option("--run", abl_run, "run directory");

  auto* rep = app.add_subcommand("report", "summarize a run directory as markdown");
  std::string rep_run = ".";
  rep->add_option("--run", rep_run, "run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (rep->parsed()) {
      std::cout << wpcl::write_report(rep_run);
      return kExitOk;
    }
    wpcl::ExperimentConfig cfg = load_config(config_path, overrides);

    if (gen->parsed()) {
      wpcl::run_gen_data(cfg, gen_out);
      std::cout << "dataset written to " << gen_out << "\n";
      return kExitOk;
    }
    if (det->parsed()) {
      const std::string backend = det_backend.empty() ? cfg.detect_backend : det_backend;
      const std::string out = det_out.empty() ? det_dataset + "/detections" : det_out;
      wpcl::DetectSummary s = wpcl::run_detect(cfg, det_dataset, backend, out);
      std::cout << "observations=" << s.observations << " requests=" << s.requests
                << " failures=" << s.failures << "\n";
      if (s.failures > 0) {
        std::cerr << "detect completed with " << s.failures << " failed observations\n";
        return kExitRuntime;
      }
      return kExitOk;
    }
    if (trn->parsed()) {
      wpcl::TrainOutcome out = wpcl::run_train(cfg, trn_dataset, trn_run);
      std::cout << "checkpoint: " << out.checkpoint_path << "\n"
                << "log rows: " << out.result.log.size() << "\n";
      if (out.result.best_val_spl >= 0) {
        std::cout << "best val SPL " << wpcl::format_double(out.result.best_val_spl)
                  << " at iter " << out.result.best_iter << "\n";
      }
      return kExitOk;
    }
    if (evl->parsed()) {
      return run_eval_command(cfg, evl_ckpt, evl_dataset, evl_splits, evl_out,
                              evl_per_episode);
    }
    if (abl->parsed()) {
      wpcl::AblateOutcome out = wpcl::run_ablate(cfg, abl_axis, abl_values, abl_run);
      std::cout << "rows: " << out.rows.size() << ", failures: " << out.failures << "\n"
                << "csv: " << out.csv_path << "\nsvg: " << out.svg_path << "\n";
      if (out.failures == static_cast<int>(out.rows.size())) return kExitRuntime;
      if (out.failures > 0) return kExitPartialAblation;
      return kExitOk;
    }
  } catch (const wpcl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
