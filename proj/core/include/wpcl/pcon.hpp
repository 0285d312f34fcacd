#ifndef WPCL_PCON_HPP_
#define WPCL_PCON_HPP_

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "wpcl/repr.hpp"
#include "wpcl/weaksup.hpp"

namespace wpcl {

// Batch of contrastive items; each item anchors at i with positive j and
// licensed negatives (possibly fewer than the configured K).
struct ContrastBatch {
  std::vector<PositivePair> items;
};

struct PconConfig {
  double tau = 0.07;
  int K = 8;
  double learning_rate = 0.05;
  int steps = 500;
  double momentum = 0.0;
  bool symmetrized = false;  // also anchor each pair at j
};

struct LossReport {
  double loss = 0.0;
  double grad_norm = 0.0;
  double pos_cos_mean = 0.0;
  double neg_cos_mean = 0.0;
  double mean_k_eff = 0.0;
  int num_items = 0;
  int zero_norm_count = 0;  // degenerate zero vectors encountered
};

// exp(cos(h1,h2)/tau) with epsilon-guarded norms.
double cosine_q(const Eigen::VectorXd& h1, const Eigen::VectorXd& h2, double tau);

// Mean over items of -log(Q(i,j) / (Q(i,j) + sum_k Q(i,k))), evaluated in
// log-space. Features are the per-observation h_objs segments.
LossReport partial_infonce(const ContrastBatch& batch,
                           const std::vector<Eigen::VectorXd>& features, double tau,
                           bool symmetrized = false);

struct PconGradients {
  LossReport report;
  std::vector<Eigen::VectorXd> d_features;  // aligned with `features`
};

PconGradients partial_infonce_backward(const ContrastBatch& batch,
                                       const std::vector<Eigen::VectorXd>& features, double tau,
                                       bool symmetrized = false);

// K negatives per pair, uniform without replacement; pairs with fewer keep
// them all. K < 0 keeps every negative.
ContrastBatch sample_batch(const std::vector<PositivePair>& pairs, int K, std::mt19937_64& rng);

// One plain-SGD update of the head on L_pcon alone; raw features are the
// backbone outputs for each observation index referenced by the batch.
LossReport pcon_train_step(Head& head, const std::vector<Eigen::VectorXd>& raw_features,
                           const ContrastBatch& batch, const PconConfig& cfg);

}  // namespace wpcl

#endif  // WPCL_PCON_HPP_
