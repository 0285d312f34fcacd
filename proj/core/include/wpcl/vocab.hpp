#ifndef WPCL_VOCAB_HPP_
#define WPCL_VOCAB_HPP_

#include <string>
#include <unordered_map>
#include <vector>

#include "wpcl/error.hpp"

namespace wpcl {

// Fixed label vocabulary; token ids are indices into `labels`.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw ConfigError("vocabulary must be non-empty");
    for (int i = 0; i < static_cast<int>(labels_.size()); ++i) {
      if (labels_[i].empty()) throw ConfigError("vocabulary labels must be non-empty");
      if (!index_.emplace(labels_[i], i).second) {
        throw ConfigError("duplicate vocabulary label: " + labels_[i]);
      }
    }
  }

  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(int id) const {
    if (id < 0 || id >= size()) throw ConfigError("token id out of range");
    return labels_[id];
  }
  int id_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw ConfigError("label not in vocabulary: " + label);
    return it->second;
  }
  bool contains(const std::string& label) const { return index_.count(label) > 0; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> index_;
};

// Household-object labels used by the default worlds.
std::vector<std::string> default_vocab();

// Ordered token ids naming up to L landmark labels along a path plus the
// target object label.
struct Instruction {
  std::vector<int> tokens;
};

struct InstructionConfig {
  int max_landmarks = 3;
};

}  // namespace wpcl

#endif  // WPCL_VOCAB_HPP_
