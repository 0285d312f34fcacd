#ifndef WPCL_NAV_HPP_
#define WPCL_NAV_HPP_

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wpcl/detector.hpp"
#include "wpcl/envsim.hpp"
#include "wpcl/metrics.hpp"
#include "wpcl/pcon.hpp"
#include "wpcl/repr.hpp"
#include "wpcl/vocab.hpp"

namespace wpcl {

// Landmark labels along the expert path (up to max_landmarks, path order,
// target's label excluded) followed by the target label.
Instruction make_instruction(const Episode& episode, const InstructionConfig& cfg,
                             const Vocabulary& vocab, const ObservationSpec& spec,
                             std::mt19937_64& rng);

struct PolicyConfig {
  int embed_dim = 16;
  int hidden_dim = 32;
  int max_tokens = 16;
  std::uint64_t seed = 0;
};

// Single local action scorer over per-action candidate views plus a
// mean-pooled visited-feature state summary.
struct PolicyParams {
  Eigen::MatrixXd token_embed;  // embed_dim x vocab_size
  Eigen::VectorXd pos_weight;   // max_tokens
  Eigen::MatrixXd W_h;          // hidden x (visual + embed + state)
  Eigen::VectorXd b_h;          // hidden
  Eigen::VectorXd w_out;        // hidden
  Eigen::VectorXd b_act;        // kNumActions
  Eigen::MatrixXd W_og;         // obj_dim x embed_dim

  int param_count() const;
  Eigen::VectorXd param_vector() const;
  void set_param_vector(const Eigen::VectorXd& v);
};

struct PolicyGrads {
  Eigen::MatrixXd d_token_embed;
  Eigen::VectorXd d_pos_weight;
  Eigen::MatrixXd dW_h;
  Eigen::VectorXd db_h;
  Eigen::VectorXd dw_out;
  Eigen::VectorXd db_act;
  Eigen::MatrixXd dW_og;

  Eigen::VectorXd to_vector() const;
};

PolicyParams make_policy(const PolicyConfig& cfg, int vocab_size, int visual_dim, int state_dim,
                         int obj_dim);
PolicyGrads zero_grads(const PolicyParams& p);

// Mean of token embeddings, each scaled by (1 + learned position weight).
Eigen::VectorXd embed_instruction(const PolicyParams& p, const Instruction& instr);

// One candidate feature per action: the view faced after taking it (Stop and
// blocked moves reuse the current view). Action identity enters only through
// the additive bias.
Eigen::Vector4d score_actions(const PolicyParams& p, const Eigen::VectorXd& h_instr,
                              const std::array<VisualFeature, kNumActions>& candidates,
                              const Eigen::VectorXd& state_summary);

// Bilinear grounding score per candidate object's h_objs segment.
Eigen::VectorXd og_logits(const PolicyParams& p, const std::vector<Eigen::VectorXd>& object_feats,
                          const Eigen::VectorXd& h_instr);

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);
double cross_entropy(const Eigen::VectorXd& logits, int target);

// Sum over steps of cross-entropy against the expert action.
double sap_loss(const std::vector<Eigen::Vector4d>& step_logits,
                const std::vector<Action>& expert_actions);

double og_loss(const Eigen::VectorXd& object_logits, int target_index);

// Stop at the goal, otherwise the first action along the BFS shortest path
// with minimal turning (180-degree ties turn left).
Action pid_target(const GridEnvironment& env, const Pose& pose, Cell goal_cell);

struct Rollout {
  const Episode* episode = nullptr;
  std::vector<Pose> poses;                  // state before each decision
  std::vector<Action> actions;              // chosen per step
  std::vector<Eigen::Vector4d> step_logits; // recorded per step
  bool stopped = false;                     // ended by Stop rather than cap
};

// Sum over rollout steps of cross-entropy against pid_target at the
// rollout's own state.
double pid_loss(const Rollout& rollout);

struct TrainConfig {
  double gamma = 1.0;   // SAP weight
  double alpha = 0.5;   // pcon weight
  int stage1_iters = 0; // episode visits under teacher forcing
  int stage2_iters = 0; // episode visits under student rollouts
  double lr = 0.05;
  double momentum = 0.0;
  int eval_interval = 0;  // extra validation every this many iters; 0 = stage ends only
  std::uint64_t seed = 0;
  int min_shared = 1;  // pairing threshold m
  double tau = 0.07;
  int K = 8;
  OracleConfig detector;      // detection noise feeding weak supervision
  double stage1_alpha = -1.0; // per-stage overrides; negative = use alpha
  double stage2_alpha = -1.0;
  int step_cap = -1;           // rollout cap; negative = 3*expert+8
  int success_threshold = 1;
};

double total_loss(double l_sap, double l_pid, double l_og, double l_pcon,
                  const TrainConfig& cfg);

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  PolicyConfig policy;
  ObservationSpec obs;
};

// Deterministic pseudo-index for candidate renders, keyed by pose so
// identical candidate views share one noise draw.
int candidate_obs_index(const GridEnvironment& env, const Pose& pose);

Observation observe_at(const GridEnvironment& env, const Pose& pose,
                       const ObservationSpec& spec, int index);

struct LossBreakdown {
  double sap = 0.0;
  double og = 0.0;
  double pid = 0.0;
  double pcon = 0.0;
  double total = 0.0;
  bool og_skipped = false;  // target not visible at final pose
};

// Detection source for weak supervision; empty function = noisy oracle from
// TrainConfig.detector.
using DetectionFn =
    std::function<std::vector<DetectionReport>(const Episode&, const std::vector<Observation>&)>;

// Frozen per-episode teacher-forcing batch: expert-frame observations, their
// raw features, per-step candidate renders, and a sampled contrastive batch
// over the same history.
struct Stage1Batch {
  const Episode* episode = nullptr;
  std::vector<Observation> history;
  std::vector<Eigen::VectorXd> raw_history;
  std::vector<std::array<Eigen::VectorXd, kNumActions>> cand_raw;
  ContrastBatch pcon_batch;
};

Stage1Batch prepare_stage1_batch(const Episode& episode, const Backbone& backbone,
                                 const ObservationSpec& spec, const TrainConfig& cfg,
                                 std::mt19937_64& rng, const DetectionFn& detect = {});

// Pure in (policy, head) given the frozen batch; grads optional.
LossBreakdown stage1_loss(const PolicyParams& policy, const Head& head, const Backbone& backbone,
                          const Stage1Batch& batch, const TrainConfig& cfg,
                          PolicyGrads* pg = nullptr, HeadGrads* hg = nullptr);

// Student-forcing batch: greedy rollout plus weak supervision on its history.
struct Stage2Batch {
  Rollout rollout;
  std::vector<Observation> history;
  std::vector<Eigen::VectorXd> raw_history;
  std::vector<std::array<Eigen::VectorXd, kNumActions>> cand_raw;
  ContrastBatch pcon_batch;
};

Stage2Batch prepare_stage2_batch(const PolicyParams& policy, const Head& head,
                                 const Backbone& backbone, const Episode& episode,
                                 const ObservationSpec& spec, const TrainConfig& cfg,
                                 std::mt19937_64& rng, const DetectionFn& detect = {});

LossBreakdown stage2_loss(const PolicyParams& policy, const Head& head, const Backbone& backbone,
                          const Stage2Batch& batch, const TrainConfig& cfg,
                          PolicyGrads* pg = nullptr, HeadGrads* hg = nullptr);

struct TrainLogRow {
  int iter = 0;
  int stage = 0;
  double l_sap = 0.0;
  double l_og = 0.0;
  double l_pid = 0.0;
  double l_pcon = 0.0;
  double total = 0.0;
};

struct TrainResult {
  PolicyParams policy;  // best by validation SPL; final params when no val
  Head head;
  std::vector<TrainLogRow> log;
  int og_skipped = 0;
  double best_val_spl = -1.0;  // -1 when never validated
  int best_iter = -1;
};

TrainResult train(const TrainConfig& cfg, const ModelConfig& model, const Vocabulary& vocab,
                  const std::vector<Episode>& train_episodes,
                  const std::vector<Episode>& val_episodes, const DetectionFn& detect = {});

struct EvalConfig {
  int step_cap = -1;  // negative: 3*expert length + 8
  int success_threshold = 1;
};

Rollout run_rollout(const PolicyParams& policy, const Head& head, const Backbone& backbone,
                    const ObservationSpec& spec, const Episode& episode, int step_cap);

std::vector<EpisodeResult> evaluate(const PolicyParams& policy, const Head& head,
                                    const Backbone& backbone, const ObservationSpec& spec,
                                    const std::vector<Episode>& episodes, const EvalConfig& cfg);

}  // namespace wpcl

#endif  // WPCL_NAV_HPP_
