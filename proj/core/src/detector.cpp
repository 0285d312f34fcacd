#include "wpcl/detector.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wpcl/rng.hpp"

namespace wpcl {

std::string normalize_label(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> parse_object_list(const std::string& text,
                                           std::span<const std::string> vocab,
                                           const LabelNormalizer& normalize) {
  const LabelNormalizer& norm = normalize ? normalize : LabelNormalizer(normalize_label);
  std::vector<std::string> labels;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    std::string label = norm(item);
    if (label.empty()) continue;
    if (!vocab.empty() && std::find(vocab.begin(), vocab.end(), label) == vocab.end()) continue;
    labels.push_back(std::move(label));
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

namespace {

std::string join_labels(const std::vector<std::string>& labels) {
  std::string out;
  for (const auto& l : labels) {
    if (!out.empty()) out += ", ";
    out += l;
  }
  return out;
}

}  // namespace

DetectionReport oracle_detect(const GridEnvironment& env, const Observation& obs,
                              const OracleConfig& cfg) {
  if (cfg.miss_rate < 0.0 || cfg.miss_rate > 1.0 || cfg.spurious_rate < 0.0 ||
      cfg.spurious_rate > 1.0) {
    throw ConfigError("detector rates must be in [0, 1]");
  }

  std::set<std::string> truth;
  for (int id : obs.visible_ids) truth.insert(env.object(id).label);

  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(obs.index), 0x646574u));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::set<std::string> kept;
  for (const auto& label : truth) {
    if (unit(rng) >= cfg.miss_rate) kept.insert(label);
  }

  // At most one spurious label per observation.
  if (unit(rng) < cfg.spurious_rate) {
    std::vector<std::string> pool =
        cfg.spurious_vocab.empty() ? env.label_set() : cfg.spurious_vocab;
    std::vector<std::string> fresh;
    for (const auto& label : pool) {
      if (!kept.count(label)) fresh.push_back(label);
    }
    if (!fresh.empty()) {
      kept.insert(fresh[std::uniform_int_distribution<std::size_t>(0, fresh.size() - 1)(rng)]);
    }
  }

  DetectionReport report;
  report.observation_index = obs.index;
  report.labels.assign(kept.begin(), kept.end());
  report.raw_text = join_labels(report.labels);
  return report;
}

std::vector<DetectionReport> oracle_detect_history(const GridEnvironment& env,
                                                   const std::vector<Observation>& history,
                                                   const OracleConfig& cfg) {
  std::vector<DetectionReport> reports;
  reports.reserve(history.size());
  for (const auto& obs : history) reports.push_back(oracle_detect(env, obs, cfg));
  return reports;
}

std::string reports_to_jsonl(const std::vector<DetectionReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    nlohmann::json row;
    row["index"] = r.observation_index;
    row["labels"] = r.labels;
    out += row.dump();
    out += '\n';
  }
  return out;
}

std::vector<DetectionReport> reports_from_jsonl(const std::string& text) {
  std::vector<DetectionReport> reports;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.contains("index") || !row.contains("labels")) {
      throw IoError("malformed detection report line: " + line);
    }
    DetectionReport r;
    r.observation_index = row["index"].get<int>();
    r.labels = row["labels"].get<std::vector<std::string>>();
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace wpcl
