#ifndef WPCL_WEAKSUP_HPP_
#define WPCL_WEAKSUP_HPP_

#include <string>
#include <utility>
#include <vector>

#include "wpcl/detector.hpp"
#include "wpcl/error.hpp"

namespace wpcl {

// Symmetric binary selection matrix over a detection history: A[i][j] = 1
// iff observations i and j share at least `min_shared` labels. Diagonal is 0.
class SelectionMatrix {
 public:
  SelectionMatrix(int n, std::vector<std::uint8_t> data);

  int size() const { return n_; }
  bool at(int i, int j) const;
  int degree(int i) const;  // number of selected partners of i
  int num_pairs() const;    // selected pairs with i < j

  // Indices k (excluding i and j) with A[i][k] == 0 and A[j][k] == 0.
  std::vector<int> negatives_for(int i, int j) const;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> data_;
};

// min_shared corresponds to the pairing threshold m; must be >= 1.
SelectionMatrix build_selection_matrix(const std::vector<DetectionReport>& reports,
                                       int min_shared = 1);

// Count of shared labels between two sorted, deduplicated label lists.
int shared_label_count(const std::vector<std::string>& a, const std::vector<std::string>& b);

// One contrastive training item: anchor/positive observation indices plus
// the licensed negative set for the pair.
struct PositivePair {
  int i = 0;
  int j = 0;
  std::vector<int> negatives;
};

// All selected pairs (i < j), ordered lexicographically; negatives attached.
std::vector<PositivePair> enumerate_positive_pairs(const SelectionMatrix& A);

// Subsample each pair's negatives to at most `max_negatives` without
// replacement; deterministic in `seed`. max_negatives < 0 keeps all.
std::vector<PositivePair> cap_negatives(std::vector<PositivePair> pairs, int max_negatives,
                                        std::uint64_t seed);

// {"n": N, "rows": [[...], ...]} for debugging and golden tests.
std::string to_json(const SelectionMatrix& A);

}  // namespace wpcl

#endif  // WPCL_WEAKSUP_HPP_
