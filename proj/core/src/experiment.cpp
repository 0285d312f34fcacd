#include "wpcl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wpcl/rng.hpp"
#include "wpcl/serialize.hpp"

namespace wpcl {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section " + ctx + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key " + ctx + "." + it.key());
  }
}

// -- config <-> json ---------------------------------------------------------

json obs_to_json(const ObservationSpec& s) {
  return {{"fov_degrees", s.fov_degrees}, {"range", s.range}};
}

ObservationSpec obs_from_json(const json& j, const std::string& ctx) {
  check_keys(j, ctx, {"fov_degrees", "range"});
  ObservationSpec s;
  s.fov_degrees = j.value("fov_degrees", s.fov_degrees);
  s.range = j.value("range", s.range);
  return s;
}

json dataset_cfg_to_json(const DatasetConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["train_envs"] = c.train_envs;
  j["unseen_envs"] = c.unseen_envs;
  j["train_episodes_per_env"] = c.train_episodes_per_env;
  j["val_seen_episodes_per_env"] = c.val_seen_episodes_per_env;
  j["val_unseen_episodes_per_env"] = c.val_unseen_episodes_per_env;
  j["env"] = {{"seed", c.env.seed},         {"width", c.env.width},
              {"height", c.env.height},     {"num_objects", c.env.num_objects},
              {"vocab", c.env.vocab},       {"wall_density", c.env.wall_density}};
  j["episode"] = {{"min_path_len", c.episode.min_path_len},
                  {"max_path_len", c.episode.max_path_len},
                  {"max_retries", c.episode.max_retries},
                  {"instruction", {{"max_landmarks", c.episode.instruction.max_landmarks}}}};
  j["obs"] = obs_to_json(c.obs);
  return j;
}

DatasetConfig dataset_cfg_from_json(const json& j) {
  check_keys(j, "dataset",
             {"seed", "train_envs", "unseen_envs", "train_episodes_per_env",
              "val_seen_episodes_per_env", "val_unseen_episodes_per_env", "env", "episode",
              "obs"});
  DatasetConfig c;
  c.seed = j.value("seed", c.seed);
  c.train_envs = j.value("train_envs", c.train_envs);
  c.unseen_envs = j.value("unseen_envs", c.unseen_envs);
  c.train_episodes_per_env = j.value("train_episodes_per_env", c.train_episodes_per_env);
  c.val_seen_episodes_per_env = j.value("val_seen_episodes_per_env", c.val_seen_episodes_per_env);
  c.val_unseen_episodes_per_env =
      j.value("val_unseen_episodes_per_env", c.val_unseen_episodes_per_env);
  if (j.contains("env")) {
    const json& e = j["env"];
    check_keys(e, "dataset.env",
               {"seed", "width", "height", "num_objects", "vocab", "wall_density"});
    c.env.seed = e.value("seed", c.env.seed);
    c.env.width = e.value("width", c.env.width);
    c.env.height = e.value("height", c.env.height);
    c.env.num_objects = e.value("num_objects", c.env.num_objects);
    c.env.vocab = e.value("vocab", c.env.vocab);
    c.env.wall_density = e.value("wall_density", c.env.wall_density);
  }
  if (j.contains("episode")) {
    const json& e = j["episode"];
    check_keys(e, "dataset.episode",
               {"min_path_len", "max_path_len", "max_retries", "instruction"});
    c.episode.min_path_len = e.value("min_path_len", c.episode.min_path_len);
    c.episode.max_path_len = e.value("max_path_len", c.episode.max_path_len);
    c.episode.max_retries = e.value("max_retries", c.episode.max_retries);
    if (e.contains("instruction")) {
      check_keys(e["instruction"], "dataset.episode.instruction", {"max_landmarks"});
      c.episode.instruction.max_landmarks =
          e["instruction"].value("max_landmarks", c.episode.instruction.max_landmarks);
    }
  }
  if (j.contains("obs")) c.obs = obs_from_json(j["obs"], "dataset.obs");
  return c;
}

json model_cfg_to_json(const ModelConfig& c) {
  json j;
  j["backbone"] = {{"d0", c.backbone.d0},
                   {"noise_sigma", c.backbone.noise_sigma},
                   {"seed", c.backbone.seed}};
  j["head"] = {{"in_dim", c.head.in_dim},
               {"out_dim", c.head.out_dim},
               {"lambda", c.head.lambda},
               {"hidden_dim", c.head.hidden_dim},
               {"seed", c.head.seed}};
  j["policy"] = {{"embed_dim", c.policy.embed_dim},
                 {"hidden_dim", c.policy.hidden_dim},
                 {"max_tokens", c.policy.max_tokens},
                 {"seed", c.policy.seed}};
  j["obs"] = obs_to_json(c.obs);
  return j;
}

ModelConfig model_cfg_from_json(const json& j) {
  check_keys(j, "model", {"backbone", "head", "policy", "obs"});
  ModelConfig c;
  if (j.contains("backbone")) {
    const json& b = j["backbone"];
    check_keys(b, "model.backbone", {"d0", "noise_sigma", "seed"});
    c.backbone.d0 = b.value("d0", c.backbone.d0);
    c.backbone.noise_sigma = b.value("noise_sigma", c.backbone.noise_sigma);
    c.backbone.seed = b.value("seed", c.backbone.seed);
  }
  if (j.contains("head")) {
    const json& h = j["head"];
    check_keys(h, "model.head", {"in_dim", "out_dim", "lambda", "hidden_dim", "seed"});
    c.head.in_dim = h.value("in_dim", c.head.in_dim);
    c.head.out_dim = h.value("out_dim", c.head.out_dim);
    c.head.lambda = h.value("lambda", c.head.lambda);
    c.head.hidden_dim = h.value("hidden_dim", c.head.hidden_dim);
    c.head.seed = h.value("seed", c.head.seed);
  }
  if (j.contains("policy")) {
    const json& p = j["policy"];
    check_keys(p, "model.policy", {"embed_dim", "hidden_dim", "max_tokens", "seed"});
    c.policy.embed_dim = p.value("embed_dim", c.policy.embed_dim);
    c.policy.hidden_dim = p.value("hidden_dim", c.policy.hidden_dim);
    c.policy.max_tokens = p.value("max_tokens", c.policy.max_tokens);
    c.policy.seed = p.value("seed", c.policy.seed);
  }
  if (j.contains("obs")) c.obs = obs_from_json(j["obs"], "model.obs");
  return c;
}

json train_cfg_to_json(const TrainConfig& c) {
  json j;
  j["gamma"] = c.gamma;
  j["alpha"] = c.alpha;
  j["stage1_iters"] = c.stage1_iters;
  j["stage2_iters"] = c.stage2_iters;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["eval_interval"] = c.eval_interval;
  j["seed"] = c.seed;
  j["min_shared"] = c.min_shared;
  j["tau"] = c.tau;
  j["K"] = c.K;
  j["detector"] = {{"miss_rate", c.detector.miss_rate},
                   {"spurious_rate", c.detector.spurious_rate},
                   {"spurious_vocab", c.detector.spurious_vocab},
                   {"seed", c.detector.seed}};
  j["stage1_alpha"] = c.stage1_alpha;
  j["stage2_alpha"] = c.stage2_alpha;
  j["step_cap"] = c.step_cap;
  j["success_threshold"] = c.success_threshold;
  return j;
}

TrainConfig train_cfg_from_json(const json& j) {
  check_keys(j, "train",
             {"gamma", "alpha", "stage1_iters", "stage2_iters", "lr", "momentum",
              "eval_interval", "seed", "min_shared", "tau", "K", "detector", "stage1_alpha",
              "stage2_alpha", "step_cap", "success_threshold"});
  TrainConfig c;
  c.gamma = j.value("gamma", c.gamma);
  c.alpha = j.value("alpha", c.alpha);
  c.stage1_iters = j.value("stage1_iters", c.stage1_iters);
  c.stage2_iters = j.value("stage2_iters", c.stage2_iters);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.seed = j.value("seed", c.seed);
  c.min_shared = j.value("min_shared", c.min_shared);
  c.tau = j.value("tau", c.tau);
  c.K = j.value("K", c.K);
  if (j.contains("detector")) {
    const json& d = j["detector"];
    check_keys(d, "train.detector", {"miss_rate", "spurious_rate", "spurious_vocab", "seed"});
    c.detector.miss_rate = d.value("miss_rate", c.detector.miss_rate);
    c.detector.spurious_rate = d.value("spurious_rate", c.detector.spurious_rate);
    c.detector.spurious_vocab = d.value("spurious_vocab", c.detector.spurious_vocab);
    c.detector.seed = d.value("seed", c.detector.seed);
  }
  c.stage1_alpha = j.value("stage1_alpha", c.stage1_alpha);
  c.stage2_alpha = j.value("stage2_alpha", c.stage2_alpha);
  c.step_cap = j.value("step_cap", c.step_cap);
  c.success_threshold = j.value("success_threshold", c.success_threshold);
  return c;
}

json vlm_cfg_to_json(const EndpointConfig& c) {
  json j;
  j["base_url"] = c.base_url;
  j["model_name"] = c.model_name;
  j["api_key_env_var"] = c.api_key_env_var;
  j["timeout_seconds"] = c.timeout_seconds;
  j["max_retries"] = c.max_retries;
  j["max_in_flight"] = c.max_in_flight;
  j["backoff_base_seconds"] = c.backoff_base_seconds;
  j["backoff_jitter"] = c.backoff_jitter;
  j["cache_path"] = c.cache_path;
  j["seed"] = c.seed;
  return j;
}

EndpointConfig vlm_cfg_from_json(const json& j) {
  check_keys(j, "vlm",
             {"base_url", "model_name", "api_key_env_var", "timeout_seconds", "max_retries",
              "max_in_flight", "backoff_base_seconds", "backoff_jitter", "cache_path", "seed"});
  EndpointConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model_name = j.value("model_name", c.model_name);
  c.api_key_env_var = j.value("api_key_env_var", c.api_key_env_var);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.backoff_base_seconds = j.value("backoff_base_seconds", c.backoff_base_seconds);
  c.backoff_jitter = j.value("backoff_jitter", c.backoff_jitter);
  c.cache_path = j.value("cache_path", c.cache_path);
  c.seed = j.value("seed", c.seed);
  return c;
}

// -- dataset <-> json --------------------------------------------------------

json env_to_json(const GridEnvironment& env) {
  std::string bitmap(static_cast<std::size_t>(env.width()) * env.height(), '0');
  for (int y = 0; y < env.height(); ++y) {
    for (int x = 0; x < env.width(); ++x) {
      if (env.walkable({x, y})) bitmap[static_cast<std::size_t>(y) * env.width() + x] = '1';
    }
  }
  json objs = json::array();
  for (const ObjectInstance& o : env.objects()) {
    objs.push_back({{"id", o.id}, {"label", o.label}, {"x", o.cell.x}, {"y", o.cell.y}});
  }
  return {{"seed", env.seed()},
          {"width", env.width()},
          {"height", env.height()},
          {"walkable", bitmap},
          {"objects", objs}};
}

std::shared_ptr<const GridEnvironment> env_from_json(const json& j) {
  const int w = j.at("width").get<int>();
  const int h = j.at("height").get<int>();
  const std::string bitmap = j.at("walkable").get<std::string>();
  if (static_cast<int>(bitmap.size()) != w * h) {
    throw IoError("dataset walkable bitmap has wrong size");
  }
  std::vector<std::uint8_t> walk(bitmap.size());
  for (std::size_t i = 0; i < bitmap.size(); ++i) walk[i] = bitmap[i] == '1' ? 1 : 0;
  std::vector<ObjectInstance> objects;
  for (const json& o : j.at("objects")) {
    objects.push_back({o.at("id").get<int>(),
                       o.at("label").get<std::string>(),
                       {o.at("x").get<int>(), o.at("y").get<int>()}});
  }
  return std::make_shared<GridEnvironment>(w, h, std::move(walk), std::move(objects),
                                           j.at("seed").get<std::uint64_t>());
}

json episode_to_json(const Episode& ep, int env_index) {
  json j;
  j["env_index"] = env_index;
  j["seed"] = ep.seed;
  j["start"] = {{"x", ep.start.cell.x}, {"y", ep.start.cell.y}, {"heading", ep.start.heading_deg}};
  j["goal"] = {{"x", ep.goal_cell.x}, {"y", ep.goal_cell.y}};
  j["target_object_id"] = ep.target_object_id;
  j["instruction"] = ep.instruction.tokens;
  json acts = json::array();
  for (Action a : ep.expert_actions) acts.push_back(static_cast<int>(a));
  j["expert_actions"] = acts;
  json cells = json::array();
  for (Cell c : ep.expert_cells) cells.push_back({c.x, c.y});
  j["expert_cells"] = cells;
  return j;
}

Episode episode_from_json(const json& j, const Dataset& ds, int* env_index_out) {
  Episode ep;
  const int env_index = j.at("env_index").get<int>();
  if (env_index < 0 || env_index >= static_cast<int>(ds.envs.size())) {
    throw IoError("dataset episode references env_index out of range");
  }
  if (env_index_out) *env_index_out = env_index;
  ep.env = ds.envs[env_index];
  ep.seed = j.at("seed").get<std::uint64_t>();
  ep.start.cell = {j.at("start").at("x").get<int>(), j.at("start").at("y").get<int>()};
  ep.start.heading_deg = j.at("start").at("heading").get<int>();
  ep.goal_cell = {j.at("goal").at("x").get<int>(), j.at("goal").at("y").get<int>()};
  ep.target_object_id = j.at("target_object_id").get<int>();
  ep.instruction.tokens = j.at("instruction").get<std::vector<int>>();
  for (const json& a : j.at("expert_actions")) {
    ep.expert_actions.push_back(static_cast<Action>(a.get<int>()));
  }
  for (const json& c : j.at("expert_cells")) {
    ep.expert_cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  }
  return ep;
}

std::string dataset_path(const std::string& dir) { return dir + "/dataset.json"; }

// -- matrices <-> json -------------------------------------------------------

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
  const int rows = j.at("rows").get<int>();
  const int cols = j.at("cols").get<int>();
  const auto& data = j.at("data");
  if (static_cast<int>(data.size()) != rows * cols) {
    throw IoError("checkpoint matrix " + name + " has " + std::to_string(data.size()) +
                  " values, expected " + std::to_string(rows * cols));
  }
  Eigen::MatrixXd m(rows, cols);
  int i = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json data = json::array();
  for (int i = 0; i < v.size(); ++i) data.push_back(v(i));
  return data;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

void require_shape(const std::string& name, long rows, long cols, long want_rows,
                   long want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw ConfigError("checkpoint " + name + " has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", model config expects " +
                      std::to_string(want_rows) + "x" + std::to_string(want_cols));
  }
}

// -- detection artifacts -----------------------------------------------------

std::string detect_artifact_path(const std::string& dir, const std::string& split) {
  return dir + "/detect_" + split + ".jsonl";
}

struct PoseKey {
  std::uint64_t env_seed;
  int x, y, heading;

  friend auto operator<=>(const PoseKey&, const PoseKey&) = default;
};

std::map<PoseKey, std::vector<std::string>> load_detect_artifact(const std::string& path) {
  std::map<PoseKey, std::vector<std::string>> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("corrupt detection line in " + path);
    PoseKey key{j.at("env_seed").get<std::uint64_t>(), j.at("pose").at("x").get<int>(),
                j.at("pose").at("y").get<int>(), j.at("pose").at("heading").get<int>()};
    out[key] = j.at("labels").get<std::vector<std::string>>();
  }
  return out;
}

// Detection hook backed by cached reports; poses outside the cache (student
// rollouts wander off the expert track) fall back to the noise-free oracle.
DetectionFn make_cached_detection_fn(std::shared_ptr<std::map<PoseKey, std::vector<std::string>>>
                                         cache) {
  return [cache](const Episode& ep, const std::vector<Observation>& history) {
    std::vector<DetectionReport> reports;
    reports.reserve(history.size());
    OracleConfig truth;  // zero rates: ground-truth labels
    for (const Observation& obs : history) {
      PoseKey key{ep.env->seed(), obs.pose.cell.x, obs.pose.cell.y, obs.pose.heading_deg};
      auto it = cache->find(key);
      if (it != cache->end()) {
        DetectionReport r;
        r.observation_index = obs.index;
        r.labels = it->second;
        reports.push_back(std::move(r));
      } else {
        reports.push_back(oracle_detect(*ep.env, obs, truth));
      }
    }
    return reports;
  };
}

double seconds_since(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

// -- dataset -----------------------------------------------------------------

Dataset generate_dataset(const DatasetConfig& cfg) {
  if (cfg.train_envs < 1) throw ConfigError("dataset needs at least one training environment");
  if (cfg.unseen_envs < 0) throw ConfigError("unseen_envs must be nonnegative");

  Dataset ds;
  ds.vocab = cfg.env.vocab.empty() ? default_vocab() : cfg.env.vocab;
  ds.obs = cfg.obs;
  ds.num_train_envs = cfg.train_envs;
  const Vocabulary vocab(ds.vocab);

  auto add_env = [&](std::uint64_t salt, int index) {
    EnvConfig ec = cfg.env;
    ec.vocab = ds.vocab;
    ec.seed = mix_seed(cfg.seed, salt, static_cast<std::uint64_t>(index));
    ds.envs.push_back(std::make_shared<GridEnvironment>(generate_environment(ec)));
  };
  for (int i = 0; i < cfg.train_envs; ++i) add_env(0x656e76u, i);
  for (int i = 0; i < cfg.unseen_envs; ++i) add_env(0x756e73u, i);

  auto fill_split = [&](const std::string& split, int env_begin, int env_end, int per_env) {
    std::vector<Episode>& out = ds.splits[split];
    for (int e = env_begin; e < env_end; ++e) {
      for (int k = 0; k < per_env; ++k) {
        const std::uint64_t base =
            mix_seed(cfg.seed, fnv1a64(split), static_cast<std::uint64_t>(e),
                     static_cast<std::uint64_t>(k));
        // A seed can land on an unsatisfiable (start, goal) draw; retry with
        // derived seeds so dataset generation stays deterministic but robust.
        for (int attempt = 0;; ++attempt) {
          try {
            out.push_back(make_episode(mix_seed(base, static_cast<std::uint64_t>(attempt)),
                                       ds.envs[e], cfg.obs, cfg.episode, vocab));
            break;
          } catch (const GenerationError&) {
            if (attempt >= 31) throw;
          }
        }
      }
    }
  };
  fill_split("train", 0, cfg.train_envs, cfg.train_episodes_per_env);
  fill_split("val_seen", 0, cfg.train_envs, cfg.val_seen_episodes_per_env);
  fill_split("val_unseen", cfg.train_envs, cfg.train_envs + cfg.unseen_envs,
             cfg.val_unseen_episodes_per_env);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  ensure_dir(dir);
  json j;
  j["version"] = kVersion;
  j["vocab"] = ds.vocab;
  j["obs"] = obs_to_json(ds.obs);
  j["num_train_envs"] = ds.num_train_envs;
  json envs = json::array();
  for (const auto& env : ds.envs) envs.push_back(env_to_json(*env));
  j["envs"] = envs;

  std::map<const GridEnvironment*, int> env_index;
  for (int i = 0; i < static_cast<int>(ds.envs.size()); ++i) env_index[ds.envs[i].get()] = i;
  json splits = json::object();
  for (const auto& [name, episodes] : ds.splits) {
    json arr = json::array();
    for (const Episode& ep : episodes) {
      auto it = env_index.find(ep.env.get());
      if (it == env_index.end()) throw IoError("episode references an environment not in envs");
      arr.push_back(episode_to_json(ep, it->second));
    }
    splits[name] = arr;
  }
  j["splits"] = splits;
  atomic_write_file(dataset_path(dir), j.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
  const std::string path = dataset_path(dir);
  if (!file_exists(path)) throw ConfigError("dataset file not found: " + path);
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw IoError("dataset file is not valid JSON: " + path);

  Dataset ds;
  ds.vocab = j.at("vocab").get<std::vector<std::string>>();
  ds.obs = obs_from_json(j.at("obs"), "dataset.obs");
  ds.num_train_envs = j.at("num_train_envs").get<int>();
  for (const json& e : j.at("envs")) ds.envs.push_back(env_from_json(e));
  for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it) {
    std::vector<Episode>& eps = ds.splits[it.key()];
    for (const json& e : it.value()) eps.push_back(episode_from_json(e, ds, nullptr));
  }
  return ds;
}

// -- experiment config -------------------------------------------------------

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.dataset.env.width = 10;
  cfg.dataset.env.height = 10;
  cfg.dataset.env.num_objects = 6;
  cfg.dataset.env.wall_density = 0.12;
  cfg.model.backbone.d0 = 48;
  cfg.model.backbone.noise_sigma = 0.15;
  cfg.model.head.in_dim = 48;
  cfg.model.head.out_dim = 48;
  cfg.model.head.lambda = 0.2;
  cfg.model.policy.embed_dim = 12;
  cfg.model.policy.hidden_dim = 24;
  cfg.train.stage1_iters = 180;
  cfg.train.stage2_iters = 60;
  cfg.train.lr = 0.1;
  cfg.train.detector.miss_rate = 0.1;
  cfg.train.detector.spurious_rate = 0.1;
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = dataset_cfg_to_json(cfg.dataset);
  j["model"] = model_cfg_to_json(cfg.model);
  j["train"] = train_cfg_to_json(cfg.train);
  j["eval"] = {{"step_cap", cfg.eval.step_cap},
               {"success_threshold", cfg.eval.success_threshold}};
  j["detect_backend"] = cfg.detect_backend;
  j["vlm"] = vlm_cfg_to_json(cfg.vlm);
  j["seeds"] = cfg.seeds;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  check_keys(j, "config",
             {"dataset", "model", "train", "eval", "detect_backend", "vlm", "seeds"});
  ExperimentConfig cfg;
  if (j.contains("dataset")) cfg.dataset = dataset_cfg_from_json(j["dataset"]);
  if (j.contains("model")) cfg.model = model_cfg_from_json(j["model"]);
  if (j.contains("train")) cfg.train = train_cfg_from_json(j["train"]);
  if (j.contains("eval")) {
    check_keys(j["eval"], "eval", {"step_cap", "success_threshold"});
    cfg.eval.step_cap = j["eval"].value("step_cap", cfg.eval.step_cap);
    cfg.eval.success_threshold =
        j["eval"].value("success_threshold", cfg.eval.success_threshold);
  }
  cfg.detect_backend = j.value("detect_backend", cfg.detect_backend);
  if (cfg.detect_backend != "oracle" && cfg.detect_backend != "vlm") {
    throw ConfigError("detect_backend must be \"oracle\" or \"vlm\", got \"" +
                      cfg.detect_backend + "\"");
  }
  if (j.contains("vlm")) cfg.vlm = vlm_cfg_from_json(j["vlm"]);
  if (j.contains("seeds")) {
    cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  if (!file_exists(path)) throw ConfigError("config file not found: " + path);
  return config_from_json(read_file(path));
}

// -- manifest ----------------------------------------------------------------

void save_manifest(const RunManifest& m, const std::string& path) {
  json j;
  j["config_hash"] = m.config_hash;
  j["status"] = m.status;
  j["error"] = m.error;
  j["wall_seconds"] = m.wall_seconds;
  j["stage_seconds"] = m.stage_seconds;
  j["artifacts"] = m.artifacts;
  j["version"] = m.version.empty() ? kVersion : m.version;
  atomic_write_file(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
  if (!file_exists(path)) throw IoError("manifest not found: " + path);
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw IoError("manifest is not valid JSON: " + path);
  RunManifest m;
  m.config_hash = j.value("config_hash", "");
  m.status = j.value("status", "");
  m.error = j.value("error", "");
  m.wall_seconds = j.value("wall_seconds", 0.0);
  m.stage_seconds = j.value("stage_seconds", std::map<std::string, double>{});
  m.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
  m.version = j.value("version", "");
  return m;
}

// -- pipeline steps ----------------------------------------------------------

void run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto started = std::chrono::steady_clock::now();
  Dataset ds = generate_dataset(cfg.dataset);
  save_dataset(ds, out_dir);
  atomic_write_file(out_dir + "/config.json", config_to_json(cfg));

  RunManifest m;
  m.config_hash = content_hash(config_to_json(cfg));
  m.status = "ok";
  m.artifacts["dataset"] = dataset_path(out_dir);
  m.artifacts["config"] = out_dir + "/config.json";
  m.wall_seconds = seconds_since(started);
  m.stage_seconds["gen_data"] = m.wall_seconds;
  save_manifest(m, out_dir + "/manifest.json");
}

DetectSummary run_detect(const ExperimentConfig& cfg, const std::string& dataset_dir,
                         const std::string& backend, const std::string& out_dir) {
  if (backend != "oracle" && backend != "vlm") {
    throw ConfigError("detect backend must be \"oracle\" or \"vlm\", got \"" + backend + "\"");
  }
  Dataset ds = load_dataset(dataset_dir);
  ensure_dir(out_dir);

  std::unique_ptr<VlmClient> client;
  if (backend == "vlm") {
    EndpointConfig ec = cfg.vlm;
    if (ec.cache_path.empty()) ec.cache_path = out_dir + "/vlm_cache.jsonl";
    client = std::make_unique<VlmClient>(ec);
  }

  DetectSummary summary;
  for (const auto& [split, episodes] : ds.splits) {
    std::set<PoseKey> seen;
    std::string lines;
    for (const Episode& ep : episodes) {
      const std::vector<Observation> history =
          collect_history(*ep.env, expert_pose_sequence(ep), ds.obs);
      for (const Observation& visit : history) {
        const Pose& pose = visit.pose;
        if (!seen.insert({ep.env->seed(), pose.cell.x, pose.cell.y, pose.heading_deg}).second) {
          continue;
        }
        // Detection noise and the vlm cache must identify the view itself,
        // not the step at which some episode happened to visit it.
        const Observation obs =
            observe_at(*ep.env, pose, ds.obs, candidate_obs_index(*ep.env, pose));
        ++summary.observations;
        DetectionReport report;
        if (backend == "oracle") {
          report = oracle_detect(*ep.env, obs, cfg.train.detector);
        } else {
          const int before = client->cache_size();
          try {
            VlmRequestRecord rec = client->detect(*ep.env, obs, ds.obs);
            report.observation_index = obs.index;
            report.labels = parse_object_list(rec.response_text);
            report.raw_text = rec.response_text;
            summary.requests += client->cache_size() - before;
          } catch (const VlmError&) {
            ++summary.requests;
            ++summary.failures;
            continue;
          }
        }
        json line;
        line["env_seed"] = ep.env->seed();
        line["observation_index"] = obs.index;
        line["pose"] = {{"x", obs.pose.cell.x},
                        {"y", obs.pose.cell.y},
                        {"heading", obs.pose.heading_deg}};
        line["labels"] = report.labels;
        line["raw_text"] = report.raw_text;
        lines += line.dump() + "\n";
      }
    }
    atomic_write_file(detect_artifact_path(out_dir, split), lines);
  }
  return summary;
}

// -- checkpoints --------------------------------------------------------------

void save_checkpoint(const PolicyParams& policy, const Head& head, const ModelConfig& model,
                     const std::string& path) {
  json j;
  j["version"] = kVersion;
  j["model"] = model_cfg_to_json(model);
  j["policy"] = {{"token_embed", matrix_to_json(policy.token_embed)},
                 {"pos_weight", vector_to_json(policy.pos_weight)},
                 {"W_h", matrix_to_json(policy.W_h)},
                 {"b_h", vector_to_json(policy.b_h)},
                 {"w_out", vector_to_json(policy.w_out)},
                 {"b_act", vector_to_json(policy.b_act)},
                 {"W_og", matrix_to_json(policy.W_og)}};
  j["head"] = {{"W1", matrix_to_json(head.W1)},
               {"b1", vector_to_json(head.b1)},
               {"W2", matrix_to_json(head.W2)},
               {"b2", vector_to_json(head.b2)}};
  atomic_write_file(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!file_exists(path)) throw ConfigError("checkpoint not found: " + path);
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw IoError("checkpoint is not valid JSON: " + path);

  const ModelConfig model = model_cfg_from_json(j.at("model"));
  Checkpoint ckpt{PolicyParams{}, Head(model.head), model};
  const json& p = j.at("policy");
  ckpt.policy.token_embed = matrix_from_json(p.at("token_embed"), "policy.token_embed");
  ckpt.policy.pos_weight = vector_from_json(p.at("pos_weight"));
  ckpt.policy.W_h = matrix_from_json(p.at("W_h"), "policy.W_h");
  ckpt.policy.b_h = vector_from_json(p.at("b_h"));
  ckpt.policy.w_out = vector_from_json(p.at("w_out"));
  ckpt.policy.b_act = vector_from_json(p.at("b_act"));
  ckpt.policy.W_og = matrix_from_json(p.at("W_og"), "policy.W_og");

  const json& h = j.at("head");
  Eigen::MatrixXd W1 = matrix_from_json(h.at("W1"), "head.W1");
  require_shape("head.W1", W1.rows(), W1.cols(), ckpt.head.W1.rows(), ckpt.head.W1.cols());
  ckpt.head.W1 = W1;
  ckpt.head.b1 = vector_from_json(h.at("b1"));
  if (ckpt.head.two_layer()) {
    Eigen::MatrixXd W2 = matrix_from_json(h.at("W2"), "head.W2");
    require_shape("head.W2", W2.rows(), W2.cols(), ckpt.head.W2.rows(), ckpt.head.W2.cols());
    ckpt.head.W2 = W2;
    ckpt.head.b2 = vector_from_json(h.at("b2"));
  }

  // Cross-check policy shapes against the stored model config.
  const PolicyConfig& pc = ckpt.model.policy;
  require_shape("policy.token_embed", ckpt.policy.token_embed.rows(),
                ckpt.policy.token_embed.cols(), pc.embed_dim, ckpt.policy.token_embed.cols());
  require_shape("policy.W_h", ckpt.policy.W_h.rows(), ckpt.policy.W_h.cols(), pc.hidden_dim,
                ckpt.policy.W_h.cols());
  require_shape("policy.b_h", ckpt.policy.b_h.size(), 1, pc.hidden_dim, 1);
  require_shape("policy.w_out", ckpt.policy.w_out.size(), 1, pc.hidden_dim, 1);
  require_shape("policy.b_act", ckpt.policy.b_act.size(), 1, kNumActions, 1);
  require_shape("policy.W_og", ckpt.policy.W_og.rows(), ckpt.policy.W_og.cols(),
                ckpt.head.obj_dim(), pc.embed_dim);
  return ckpt;
}

// -- train --------------------------------------------------------------------

TrainOutcome run_train(const ExperimentConfig& cfg, const std::string& dataset_dir,
                       const std::string& run_dir) {
  ensure_dir(run_dir);
  RunLock lock(run_dir);
  const std::string config_text = config_to_json(cfg);
  atomic_write_file(run_dir + "/config.json", config_text);

  RunManifest m;
  m.config_hash = content_hash(config_text);
  const std::string manifest_path = run_dir + "/manifest.json";
  save_manifest(m, manifest_path);

  const auto started = std::chrono::steady_clock::now();
  try {
    Dataset ds = load_dataset(dataset_dir);
    const Vocabulary vocab(ds.vocab);

    DetectionFn detect;
    if (cfg.detect_backend == "vlm") {
      const std::string artifact = detect_artifact_path(dataset_dir + "/detections", "train");
      if (!file_exists(artifact)) {
        throw ConfigError("vlm backend needs detection artifacts; run detect first (missing " +
                          artifact + ")");
      }
      auto cache = std::make_shared<std::map<PoseKey, std::vector<std::string>>>(
          load_detect_artifact(artifact));
      detect = make_cached_detection_fn(std::move(cache));
    }

    ModelConfig model = cfg.model;
    model.obs = ds.obs;
    TrainResult result = train(cfg.train, model, vocab, ds.splits.at("train"),
                               ds.splits.at("val_seen"), detect);
    m.stage_seconds["train"] = seconds_since(started);

    TrainOutcome out{std::move(result), run_dir + "/checkpoint.json",
                     run_dir + "/train_log.csv", manifest_path};
    save_checkpoint(out.result.policy, out.result.head, model, out.checkpoint_path);

    std::vector<std::vector<std::string>> rows;
    rows.reserve(out.result.log.size());
    for (const TrainLogRow& r : out.result.log) {
      rows.push_back({std::to_string(r.iter), std::to_string(r.stage), format_double(r.l_sap),
                      format_double(r.l_og), format_double(r.l_pid), format_double(r.l_pcon),
                      format_double(r.total)});
    }
    atomic_write_file(out.log_path,
                      to_csv({"iter", "stage", "l_sap", "l_og", "l_pid", "l_pcon", "total"},
                             rows));

    m.status = "ok";
    m.artifacts["checkpoint"] = out.checkpoint_path;
    m.artifacts["train_log"] = out.log_path;
    m.artifacts["config"] = run_dir + "/config.json";
    m.wall_seconds = seconds_since(started);
    save_manifest(m, manifest_path);
    return out;
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    m.wall_seconds = seconds_since(started);
    save_manifest(m, manifest_path);
    throw;
  }
}

// -- eval ----------------------------------------------------------------------

EvalOutcome run_eval(const ExperimentConfig& cfg, const Checkpoint& ckpt, const Dataset& dataset,
                     const std::string& split, std::uint64_t seed) {
  auto it = dataset.splits.find(split);
  if (it == dataset.splits.end()) throw ConfigError("dataset has no split named " + split);

  ModelConfig model = ckpt.model;
  model.obs = dataset.obs;
  const Backbone backbone(model.backbone);
  EvalConfig ec = cfg.eval;

  EvalOutcome out;
  out.results = evaluate(ckpt.policy, ckpt.head, backbone, model.obs, it->second, ec);
  out.summary = summarize(out.results);
  out.csv = to_csv({"split", "seed", "TL", "NE", "SR", "SPL", "OSR"},
                   {{split, std::to_string(seed), format_double(out.summary.tl),
                     format_double(out.summary.ne), format_double(out.summary.sr),
                     format_double(out.summary.spl), format_double(out.summary.osr)}});
  return out;
}

// -- ablation -------------------------------------------------------------------

const std::vector<std::string> kAblationAxes = {"alpha", "lambda", "m", "noise", "tau", "K"};

ExperimentConfig apply_axis(ExperimentConfig cfg, const std::string& axis, double value) {
  if (axis == "alpha") {
    if (value < 0) throw ConfigError("alpha must be nonnegative");
    cfg.train.alpha = value;
  } else if (axis == "lambda") {
    cfg.model.head.lambda = value;
  } else if (axis == "m") {
    const int m = static_cast<int>(std::lround(value));
    if (m < 1) throw ConfigError("m must be >= 1");
    cfg.train.min_shared = m;
  } else if (axis == "noise") {
    if (value < 0 || value > 1) throw ConfigError("noise must be in [0,1]");
    cfg.train.detector.miss_rate = value;
    cfg.train.detector.spurious_rate = value;
  } else if (axis == "tau") {
    if (value <= 0) throw ConfigError("tau must be positive");
    cfg.train.tau = value;
  } else if (axis == "K") {
    const int k = static_cast<int>(std::lround(value));
    if (k < 0) throw ConfigError("K must be nonnegative");
    cfg.train.K = k;
  } else {
    std::string axes;
    for (const std::string& a : kAblationAxes) axes += (axes.empty() ? "" : ", ") + a;
    throw ConfigError("unknown ablation axis " + axis + "; expected one of " + axes);
  }
  return cfg;
}

AblateOutcome run_ablate(const ExperimentConfig& cfg, const std::string& axis,
                         const std::vector<double>& values, const std::string& run_dir) {
  if (values.empty()) throw ConfigError("ablation needs at least one value");
  apply_axis(cfg, axis, values.front());  // validate the axis name up front
  ensure_dir(run_dir);
  RunLock lock(run_dir);

  const std::string config_text = config_to_json(cfg);
  atomic_write_file(run_dir + "/config.json", config_text);
  RunManifest m;
  m.config_hash = content_hash(config_text);
  const std::string manifest_path = run_dir + "/manifest.json";
  save_manifest(m, manifest_path);

  const auto started = std::chrono::steady_clock::now();
  const std::string split = "val_unseen";
  AblateOutcome out;
  Dataset ds;
  try {
    ds = generate_dataset(cfg.dataset);
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    m.wall_seconds = seconds_since(started);
    save_manifest(m, manifest_path);
    throw;
  }
  const Vocabulary vocab(ds.vocab);

  for (double value : values) {
    for (std::uint64_t seed : cfg.seeds) {
      AblationRow row;
      row.value = value;
      row.seed = seed;
      row.split = split;
      try {
        ExperimentConfig run_cfg = apply_axis(cfg, axis, value);
        run_cfg.train.seed = seed;
        ModelConfig model = run_cfg.model;
        model.obs = ds.obs;
        TrainResult tr = train(run_cfg.train, model, vocab, ds.splits.at("train"),
                               ds.splits.at("val_seen"), {});
        const Backbone backbone(model.backbone);
        std::vector<EpisodeResult> results = evaluate(
            tr.policy, tr.head, backbone, ds.obs, ds.splits.at(split), run_cfg.eval);
        row.summary = summarize(results);
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        ++out.failures;
      }
      out.rows.push_back(std::move(row));
    }
  }

  std::vector<std::vector<std::string>> csv_rows;
  for (const AblationRow& r : out.rows) {
    csv_rows.push_back({axis, format_double(r.value), std::to_string(r.seed), r.split,
                        format_double(r.summary.tl), format_double(r.summary.ne),
                        format_double(r.summary.sr), format_double(r.summary.spl),
                        format_double(r.summary.osr), r.failed ? "1" : "0", r.error});
  }
  out.csv_path = run_dir + "/ablate_" + axis + ".csv";
  atomic_write_file(out.csv_path,
                    to_csv({"axis", "value", "seed", "split", "TL", "NE", "SR", "SPL", "OSR",
                            "failed", "error"},
                           csv_rows));

  // Seed-mean SR/SPL per value for the plot; failed cells are left out.
  std::vector<double> xs;
  std::vector<double> sr_mean, spl_mean;
  for (double value : values) {
    double sr = 0, spl = 0;
    int n = 0;
    for (const AblationRow& r : out.rows) {
      if (r.failed || r.value != value) continue;
      sr += r.summary.sr;
      spl += r.summary.spl;
      ++n;
    }
    if (n == 0) continue;
    xs.push_back(value);
    sr_mean.push_back(sr / n);
    spl_mean.push_back(spl / n);
  }
  out.svg_path = run_dir + "/ablate_" + axis + ".svg";
  atomic_write_file(out.svg_path,
                    svg_line_plot("sweep over " + axis + " (" + split + ")", axis, xs,
                                  {{"SR", sr_mean}, {"SPL", spl_mean}}));

  m.status = out.failures == 0 ? "ok" : "failed";
  if (out.failures > 0) {
    m.error = std::to_string(out.failures) + " of " + std::to_string(out.rows.size()) +
              " sweep cells failed";
  }
  m.artifacts["ablate_csv"] = out.csv_path;
  m.artifacts["ablate_svg"] = out.svg_path;
  m.wall_seconds = seconds_since(started);
  m.stage_seconds["ablate"] = m.wall_seconds;
  save_manifest(m, manifest_path);
  return out;
}

// -- plotting -------------------------------------------------------------------

namespace {

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::vector<double>& xs,
                          const std::map<std::string, std::vector<double>>& series) {
  for (const auto& [name, ys] : series) {
    if (ys.size() != xs.size()) {
      throw ConfigError("series " + name + " has " + std::to_string(ys.size()) +
                        " points, expected " + std::to_string(xs.size()));
    }
  }
  constexpr int W = 640, H = 400, L = 64, R = 24, T = 44, B = 52;
  const double plot_w = W - L - R, plot_h = H - T - B;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!xs.empty()) {
    xmin = *std::min_element(xs.begin(), xs.end());
    xmax = *std::max_element(xs.begin(), xs.end());
  }
  bool have_y = false;
  for (const auto& [name, ys] : series) {
    for (double y : ys) {
      if (!std::isfinite(y)) continue;
      ymin = have_y ? std::min(ymin, y) : y;
      ymax = have_y ? std::max(ymax, y) : y;
      have_y = true;
    }
  }
  if (!have_y) ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * plot_w; };
  auto sy = [&](double y) { return T + plot_h - (y - ymin) / (ymax - ymin) * plot_h; };

  static const char* kColors[] = {"#1f6fb2", "#c2542e", "#3d8c4f", "#7a4fa3", "#b05fa0"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
      << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << title << "</text>\n";

  svg << "<line x1=\"" << L << "\" y1=\"" << T + plot_h << "\" x2=\"" << L + plot_w << "\" y2=\""
      << T + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 4.0;
    const double fy = ymin + (ymax - ymin) * t / 4.0;
    svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << T + plot_h << "\" x2=\"" << sx(fx)
        << "\" y2=\"" << T + plot_h + 5 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << sx(fx) << "\" y=\"" << T + plot_h + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt_tick(fx) << "</text>\n";
    svg << "<line x1=\"" << L - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << L << "\" y2=\""
        << sy(fy) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << L - 8 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(fy)
        << "</text>\n";
  }
  svg << "<text x=\"" << L + plot_w / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
      << "</text>\n";

  int idx = 0;
  for (const auto& [name, ys] : series) {
    const char* color = kColors[idx % 5];
    std::ostringstream pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      pts << sx(xs[i]) << "," << sy(ys[i]) << " ";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
        << pts.str() << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      svg << "<circle cx=\"" << sx(xs[i]) << "\" cy=\"" << sy(ys[i]) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    svg << "<rect x=\"" << L + plot_w - 110 << "\" y=\"" << T + 8 + 18 * idx
        << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n"
        << "<text x=\"" << L + plot_w - 92 << "\" y=\"" << T + 18 + 18 * idx
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
    ++idx;
  }
  svg << "</svg>\n";
  return svg.str();
}

// -- report ---------------------------------------------------------------------

namespace {

std::string csv_to_markdown(const std::string& csv, int max_rows) {
  // Light parser: artifact CSVs only quote when needed and hold no newlines
  // inside fields.
  std::istringstream in(csv);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line) && static_cast<int>(rows.size()) <= max_rows) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted) {
        if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          field += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        fields.push_back(std::move(field));
        field.clear();
      } else {
        field += ch;
      }
    }
    fields.push_back(std::move(field));
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) return "(empty)\n";

  std::ostringstream md;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    md << "|";
    for (const std::string& f : rows[r]) md << " " << f << " |";
    md << "\n";
    if (r == 0) {
      md << "|";
      for (std::size_t c = 0; c < rows[0].size(); ++c) md << " --- |";
      md << "\n";
    }
  }
  return md.str();
}

}  // namespace

std::string write_report(const std::string& run_dir) {
  std::ostringstream md;
  md << "# Run report: " << run_dir << "\n\n";

  const std::string manifest_path = run_dir + "/manifest.json";
  if (file_exists(manifest_path)) {
    RunManifest m = load_manifest(manifest_path);
    md << "## Manifest\n\n"
       << "| field | value |\n| --- | --- |\n"
       << "| status | " << m.status << " |\n"
       << "| config hash | " << m.config_hash << " |\n"
       << "| version | " << m.version << " |\n"
       << "| wall seconds | " << format_double(m.wall_seconds) << " |\n";
    for (const auto& [stage, secs] : m.stage_seconds) {
      md << "| stage " << stage << " | " << format_double(secs) << "s |\n";
    }
    if (!m.error.empty()) md << "| error | " << m.error << " |\n";
    md << "\n";
    if (!m.artifacts.empty()) {
      md << "## Artifacts\n\n";
      for (const auto& [name, path] : m.artifacts) md << "- " << name << ": `" << path << "`\n";
      md << "\n";
    }
  } else {
    md << "(no manifest found)\n\n";
  }

  std::vector<std::string> csvs;
  if (std::filesystem::is_directory(run_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
      if (entry.path().extension() == ".csv") csvs.push_back(entry.path().filename().string());
    }
  }
  std::sort(csvs.begin(), csvs.end());
  for (const std::string& name : csvs) {
    md << "## " << name << "\n\n"
       << csv_to_markdown(read_file(run_dir + "/" + name), name == "train_log.csv" ? 12 : 60)
       << "\n";
  }

  const std::string text = md.str();
  atomic_write_file(run_dir + "/report.md", text);
  return text;
}

}  // namespace wpcl
