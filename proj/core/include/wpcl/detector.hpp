#ifndef WPCL_DETECTOR_HPP_
#define WPCL_DETECTOR_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wpcl/envsim.hpp"
#include "wpcl/error.hpp"

namespace wpcl {

// Per-observation detection output. `labels` is sorted, deduplicated, and
// normalized; `raw_text` preserves the backend's verbatim reply.
struct DetectionReport {
  int observation_index = 0;
  std::vector<std::string> labels;
  std::string raw_text;
};

// Lowercase, trim ends, collapse internal whitespace runs to single spaces.
std::string normalize_label(const std::string& raw);

using LabelNormalizer = std::function<std::string(const std::string&)>;

// Split a comma-separated reply into normalized labels (sorted, unique,
// empties dropped). `vocab`, when given, whitelists the output.
std::vector<std::string> parse_object_list(const std::string& text,
                                           std::span<const std::string> vocab = {},
                                           const LabelNormalizer& normalize = {});

// Noisy oracle over ground-truth visibility: drops each true label with
// probability miss_rate and injects spurious vocab labels.
struct OracleConfig {
  double miss_rate = 0.0;
  double spurious_rate = 0.0;
  std::vector<std::string> spurious_vocab;  // empty: use env label set
  std::uint64_t seed = 0;
};

DetectionReport oracle_detect(const GridEnvironment& env, const Observation& obs,
                              const OracleConfig& cfg);

std::vector<DetectionReport> oracle_detect_history(const GridEnvironment& env,
                                                   const std::vector<Observation>& history,
                                                   const OracleConfig& cfg);

// One {"index": i, "labels": [...]} object per line.
std::string reports_to_jsonl(const std::vector<DetectionReport>& reports);
std::vector<DetectionReport> reports_from_jsonl(const std::string& text);

}  // namespace wpcl

#endif  // WPCL_DETECTOR_HPP_
