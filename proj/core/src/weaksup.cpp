#include "wpcl/weaksup.hpp"

#include <algorithm>
#include <random>

#include "wpcl/rng.hpp"

namespace wpcl {

SelectionMatrix::SelectionMatrix(int n, std::vector<std::uint8_t> data)
    : n_(n), data_(std::move(data)) {
  if (n_ < 0) throw ConfigError("selection matrix size must be nonnegative");
  if (data_.size() != static_cast<std::size_t>(n_) * n_) {
    throw ConfigError("selection matrix data size mismatch");
  }
  for (int i = 0; i < n_; ++i) {
    if (data_[static_cast<std::size_t>(i) * n_ + i] != 0) {
      throw ConfigError("selection matrix diagonal must be zero");
    }
    for (int j = 0; j < n_; ++j) {
      std::uint8_t v = data_[static_cast<std::size_t>(i) * n_ + j];
      if (v > 1) throw ConfigError("selection matrix entries must be 0 or 1");
      if (v != data_[static_cast<std::size_t>(j) * n_ + i]) {
        throw ConfigError("selection matrix must be symmetric");
      }
    }
  }
}

bool SelectionMatrix::at(int i, int j) const {
  if (i < 0 || i >= n_ || j < 0 || j >= n_) throw ConfigError("selection matrix index out of range");
  return data_[static_cast<std::size_t>(i) * n_ + j] != 0;
}

int SelectionMatrix::degree(int i) const {
  int d = 0;
  for (int j = 0; j < n_; ++j) {
    if (at(i, j)) ++d;
  }
  return d;
}

int SelectionMatrix::num_pairs() const {
  int c = 0;
  for (int i = 0; i < n_; ++i) {
    for (int j = i + 1; j < n_; ++j) {
      if (at(i, j)) ++c;
    }
  }
  return c;
}

std::vector<int> SelectionMatrix::negatives_for(int i, int j) const {
  if (!at(i, j)) throw ConfigError("negatives_for requires a positive pair");
  std::vector<int> ks;
  for (int k = 0; k < n_; ++k) {
    if (k == i || k == j) continue;
    if (!at(i, k) && !at(j, k)) ks.push_back(k);
  }
  return ks;
}

int shared_label_count(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  // Inputs are sorted and deduplicated (DetectionReport invariant).
  int count = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++count;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return count;
}

SelectionMatrix build_selection_matrix(const std::vector<DetectionReport>& reports,
                                       int min_shared) {
  if (min_shared < 1) throw ConfigError("pairing threshold m must be >= 1");
  const int n = static_cast<int>(reports.size());
  std::vector<std::uint8_t> data(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (shared_label_count(reports[i].labels, reports[j].labels) >= min_shared) {
        data[static_cast<std::size_t>(i) * n + j] = 1;
        data[static_cast<std::size_t>(j) * n + i] = 1;
      }
    }
  }
  return SelectionMatrix(n, std::move(data));
}

std::vector<PositivePair> enumerate_positive_pairs(const SelectionMatrix& A) {
  std::vector<PositivePair> pairs;
  for (int i = 0; i < A.size(); ++i) {
    for (int j = i + 1; j < A.size(); ++j) {
      if (A.at(i, j)) pairs.push_back({i, j, A.negatives_for(i, j)});
    }
  }
  return pairs;
}

std::vector<PositivePair> cap_negatives(std::vector<PositivePair> pairs, int max_negatives,
                                        std::uint64_t seed) {
  if (max_negatives < 0) return pairs;
  for (auto& pair : pairs) {
    if (static_cast<int>(pair.negatives.size()) <= max_negatives) continue;
    std::mt19937_64 rng(mix_seed(seed, pair.i, pair.j));
    // Partial Fisher-Yates: the first max_negatives entries become the sample.
    for (int t = 0; t < max_negatives; ++t) {
      std::uniform_int_distribution<int> pick(t, static_cast<int>(pair.negatives.size()) - 1);
      std::swap(pair.negatives[t], pair.negatives[pick(rng)]);
    }
    pair.negatives.resize(max_negatives);
    std::sort(pair.negatives.begin(), pair.negatives.end());
  }
  return pairs;
}

std::string to_json(const SelectionMatrix& A) {
  std::string out = "{\"n\": " + std::to_string(A.size()) + ", \"rows\": [";
  for (int i = 0; i < A.size(); ++i) {
    out += i == 0 ? "[" : ", [";
    for (int j = 0; j < A.size(); ++j) {
      if (j > 0) out += ", ";
      out += A.at(i, j) ? '1' : '0';
    }
    out += ']';
  }
  out += "]}";
  return out;
}

}  // namespace wpcl
