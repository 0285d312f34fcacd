#include "wpcl/nav.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "wpcl/optim.hpp"
#include "wpcl/rng.hpp"

namespace wpcl {

Instruction make_instruction(const Episode& episode, const InstructionConfig& cfg,
                             const Vocabulary& vocab, const ObservationSpec& spec,
                             std::mt19937_64& rng) {
  if (cfg.max_landmarks < 0) throw ConfigError("max_landmarks must be nonnegative");
  const GridEnvironment& env = *episode.env;
  const std::string target_label = env.object(episode.target_object_id).label;

  // Distinct non-target labels in first-seen order along the expert path.
  std::vector<std::string> landmarks;
  std::set<std::string> seen{target_label};
  for (const Pose& pose : expert_pose_sequence(episode)) {
    for (int id : visible_objects(env, pose, spec)) {
      const std::string& label = env.object(id).label;
      if (seen.insert(label).second) landmarks.push_back(label);
    }
  }

  if (static_cast<int>(landmarks.size()) > cfg.max_landmarks) {
    std::vector<int> order(landmarks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int t = 0; t < cfg.max_landmarks; ++t) {
      std::uniform_int_distribution<int> pick(t, static_cast<int>(order.size()) - 1);
      std::swap(order[t], order[pick(rng)]);
    }
    order.resize(cfg.max_landmarks);
    std::sort(order.begin(), order.end());  // keep path order
    std::vector<std::string> kept;
    for (int idx : order) kept.push_back(landmarks[idx]);
    landmarks = std::move(kept);
  }

  Instruction instr;
  for (const auto& label : landmarks) instr.tokens.push_back(vocab.id_of(label));
  instr.tokens.push_back(vocab.id_of(target_label));
  return instr;
}

namespace {

void xavier_init(Eigen::MatrixXd& m, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (m.rows() + m.cols()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (int c = 0; c < m.cols(); ++c) {
    for (int r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
  }
}

void xavier_init(Eigen::VectorXd& v, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (v.size() + 1));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (int i = 0; i < v.size(); ++i) v[i] = u(rng);
}

void append_flat(Eigen::VectorXd& out, int& at, const Eigen::MatrixXd& m) {
  out.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  at += static_cast<int>(m.size());
}

void append_flat(Eigen::VectorXd& out, int& at, const Eigen::VectorXd& v) {
  out.segment(at, v.size()) = v;
  at += static_cast<int>(v.size());
}

void read_flat(const Eigen::VectorXd& in, int& at, Eigen::MatrixXd& m) {
  Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = in.segment(at, m.size());
  at += static_cast<int>(m.size());
}

void read_flat(const Eigen::VectorXd& in, int& at, Eigen::VectorXd& v) {
  v = in.segment(at, v.size());
  at += static_cast<int>(v.size());
}

}  // namespace

PolicyParams make_policy(const PolicyConfig& cfg, int vocab_size, int visual_dim, int state_dim,
                         int obj_dim) {
  if (cfg.embed_dim <= 0 || cfg.hidden_dim <= 0 || cfg.max_tokens <= 0) {
    throw ConfigError("policy dims must be positive");
  }
  if (vocab_size <= 0 || visual_dim <= 0 || state_dim <= 0 || obj_dim <= 0) {
    throw ConfigError("policy input dims must be positive");
  }
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x706f6cu));
  PolicyParams p;
  p.token_embed.resize(cfg.embed_dim, vocab_size);
  xavier_init(p.token_embed, rng);
  p.pos_weight = Eigen::VectorXd::Zero(cfg.max_tokens);
  p.W_h.resize(cfg.hidden_dim, visual_dim + cfg.embed_dim + state_dim);
  xavier_init(p.W_h, rng);
  p.b_h = Eigen::VectorXd::Zero(cfg.hidden_dim);
  p.w_out.resize(cfg.hidden_dim);
  xavier_init(p.w_out, rng);
  p.b_act = Eigen::VectorXd::Zero(kNumActions);
  p.W_og.resize(obj_dim, cfg.embed_dim);
  xavier_init(p.W_og, rng);
  return p;
}

PolicyGrads zero_grads(const PolicyParams& p) {
  PolicyGrads g;
  g.d_token_embed = Eigen::MatrixXd::Zero(p.token_embed.rows(), p.token_embed.cols());
  g.d_pos_weight = Eigen::VectorXd::Zero(p.pos_weight.size());
  g.dW_h = Eigen::MatrixXd::Zero(p.W_h.rows(), p.W_h.cols());
  g.db_h = Eigen::VectorXd::Zero(p.b_h.size());
  g.dw_out = Eigen::VectorXd::Zero(p.w_out.size());
  g.db_act = Eigen::VectorXd::Zero(p.b_act.size());
  g.dW_og = Eigen::MatrixXd::Zero(p.W_og.rows(), p.W_og.cols());
  return g;
}

int PolicyParams::param_count() const {
  return static_cast<int>(token_embed.size() + pos_weight.size() + W_h.size() + b_h.size() +
                          w_out.size() + b_act.size() + W_og.size());
}

Eigen::VectorXd PolicyParams::param_vector() const {
  Eigen::VectorXd v(param_count());
  int at = 0;
  append_flat(v, at, token_embed);
  append_flat(v, at, pos_weight);
  append_flat(v, at, W_h);
  append_flat(v, at, b_h);
  append_flat(v, at, w_out);
  append_flat(v, at, b_act);
  append_flat(v, at, W_og);
  return v;
}

void PolicyParams::set_param_vector(const Eigen::VectorXd& v) {
  if (v.size() != param_count()) throw ConfigError("policy parameter vector size mismatch");
  int at = 0;
  read_flat(v, at, token_embed);
  read_flat(v, at, pos_weight);
  read_flat(v, at, W_h);
  read_flat(v, at, b_h);
  read_flat(v, at, w_out);
  read_flat(v, at, b_act);
  read_flat(v, at, W_og);
}

Eigen::VectorXd PolicyGrads::to_vector() const {
  Eigen::VectorXd v(d_token_embed.size() + d_pos_weight.size() + dW_h.size() + db_h.size() +
                    dw_out.size() + db_act.size() + dW_og.size());
  int at = 0;
  append_flat(v, at, d_token_embed);
  append_flat(v, at, d_pos_weight);
  append_flat(v, at, dW_h);
  append_flat(v, at, db_h);
  append_flat(v, at, dw_out);
  append_flat(v, at, db_act);
  append_flat(v, at, dW_og);
  return v;
}

Eigen::VectorXd embed_instruction(const PolicyParams& p, const Instruction& instr) {
  const int T = static_cast<int>(instr.tokens.size());
  if (T == 0) throw ConfigError("instruction has no tokens");
  if (T > p.pos_weight.size()) throw ConfigError("instruction longer than max_tokens");
  Eigen::VectorXd h = Eigen::VectorXd::Zero(p.token_embed.rows());
  for (int t = 0; t < T; ++t) {
    const int tok = instr.tokens[t];
    if (tok < 0 || tok >= p.token_embed.cols()) throw ConfigError("token id out of range");
    h += (1.0 + p.pos_weight[t]) * p.token_embed.col(tok);
  }
  return h / static_cast<double>(T);
}

namespace {

void embed_backward(const PolicyParams& p, const Instruction& instr, const Eigen::VectorXd& dh,
                    PolicyGrads* pg) {
  const double inv_t = 1.0 / static_cast<double>(instr.tokens.size());
  for (int t = 0; t < static_cast<int>(instr.tokens.size()); ++t) {
    const int tok = instr.tokens[t];
    pg->d_token_embed.col(tok) += inv_t * (1.0 + p.pos_weight[t]) * dh;
    pg->d_pos_weight[t] += inv_t * dh.dot(p.token_embed.col(tok));
  }
}

// Forward pass of the action scorer on raw candidate views; caches the
// encoded candidates and hidden activations for the backward pass.
Eigen::Vector4d raw_step_logits(const PolicyParams& p, const Head& head,
                                const std::array<Eigen::VectorXd, kNumActions>& cand_raw,
                                const Eigen::VectorXd& h_instr, const Eigen::VectorXd& state,
                                std::array<Eigen::VectorXd, kNumActions>* cand_out,
                                std::array<Eigen::VectorXd, kNumActions>* hidden_out) {
  std::array<VisualFeature, kNumActions> cands;
  for (int a = 0; a < kNumActions; ++a) {
    cands[a] = head.encode(cand_raw[a]);
    if (cand_out) (*cand_out)[a] = cands[a].values;
  }
  Eigen::Vector4d logits;
  const int d = head.out_dim();
  const int e = static_cast<int>(h_instr.size());
  const int s = static_cast<int>(state.size());
  if (p.W_h.cols() != d + e + s) throw ConfigError("scorer input dimension mismatch");
  Eigen::VectorXd x(d + e + s);
  x.segment(d, e) = h_instr;
  x.segment(d + e, s) = state;
  for (int a = 0; a < kNumActions; ++a) {
    x.head(d) = cands[a].values;
    Eigen::VectorXd u = (p.W_h * x + p.b_h).array().tanh();
    if (hidden_out) (*hidden_out)[a] = u;
    logits[a] = p.w_out.dot(u) + p.b_act[a];
  }
  return logits;
}

// Backward of one scored step given d(loss)/d(logits); accumulates policy
// and head grads and the instruction-embedding grad.
void raw_step_backward(const PolicyParams& p, const Head& head,
                       const std::array<Eigen::VectorXd, kNumActions>& cand_raw,
                       const Eigen::VectorXd& h_instr, const Eigen::VectorXd& state,
                       const std::array<Eigen::VectorXd, kNumActions>& hidden,
                       const Eigen::Vector4d& dlogits, PolicyGrads* pg, HeadGrads* hg,
                       Eigen::VectorXd* dh_instr) {
  const int d = head.out_dim();
  const int e = static_cast<int>(h_instr.size());
  const int s = static_cast<int>(state.size());
  Eigen::VectorXd x(d + e + s);
  x.segment(d, e) = h_instr;
  x.segment(d + e, s) = state;
  for (int a = 0; a < kNumActions; ++a) {
    const double dl = dlogits[a];
    if (dl == 0.0) continue;
    const Eigen::VectorXd& u = hidden[a];
    pg->dw_out += dl * u;
    pg->db_act[a] += dl;
    Eigen::VectorXd da = (dl * p.w_out.array() * (1.0 - u.array().square())).matrix();
    x.head(d) = head.forward(cand_raw[a]);
    pg->dW_h += da * x.transpose();
    pg->db_h += da;
    Eigen::VectorXd dx = p.W_h.transpose() * da;
    head.backward(cand_raw[a], dx.head(d), hg);
    *dh_instr += dx.segment(d, e);
    // state summary is parameter-free; its grad slice is dropped
  }
}

Eigen::Vector4d ce_dlogits(const Eigen::Vector4d& logits, int target, double weight) {
  Eigen::VectorXd ls = log_softmax(logits);
  Eigen::Vector4d d;
  for (int a = 0; a < kNumActions; ++a) {
    d[a] = weight * (std::exp(ls[a]) - (a == target ? 1.0 : 0.0));
  }
  return d;
}

}  // namespace

Eigen::Vector4d score_actions(const PolicyParams& p, const Eigen::VectorXd& h_instr,
                              const std::array<VisualFeature, kNumActions>& candidates,
                              const Eigen::VectorXd& state_summary) {
  const int d = static_cast<int>(candidates[0].values.size());
  const int e = static_cast<int>(h_instr.size());
  const int s = static_cast<int>(state_summary.size());
  if (p.W_h.cols() != d + e + s) throw ConfigError("scorer input dimension mismatch");
  Eigen::Vector4d logits;
  Eigen::VectorXd x(d + e + s);
  x.segment(d, e) = h_instr;
  x.segment(d + e, s) = state_summary;
  for (int a = 0; a < kNumActions; ++a) {
    if (candidates[a].values.size() != d) throw ConfigError("candidate dimension mismatch");
    x.head(d) = candidates[a].values;
    logits[a] = p.w_out.dot((p.W_h * x + p.b_h).array().tanh().matrix()) + p.b_act[a];
  }
  return logits;
}

Eigen::VectorXd og_logits(const PolicyParams& p, const std::vector<Eigen::VectorXd>& object_feats,
                          const Eigen::VectorXd& h_instr) {
  if (h_instr.size() != p.W_og.cols()) throw ConfigError("og instruction dimension mismatch");
  Eigen::VectorXd w = p.W_og * h_instr;
  Eigen::VectorXd logits(object_feats.size());
  for (std::size_t c = 0; c < object_feats.size(); ++c) {
    if (object_feats[c].size() != w.size()) throw ConfigError("og feature dimension mismatch");
    logits[c] = object_feats[c].dot(w);
  }
  return logits;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

double cross_entropy(const Eigen::VectorXd& logits, int target) {
  if (target < 0 || target >= logits.size()) throw ConfigError("cross_entropy target out of range");
  return -log_softmax(logits)[target];
}

double sap_loss(const std::vector<Eigen::Vector4d>& step_logits,
                const std::vector<Action>& expert_actions) {
  if (step_logits.size() != expert_actions.size()) {
    throw ConfigError("sap_loss length mismatch");
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < step_logits.size(); ++t) {
    loss += cross_entropy(step_logits[t], static_cast<int>(expert_actions[t]));
  }
  return loss;
}

double og_loss(const Eigen::VectorXd& object_logits, int target_index) {
  return cross_entropy(object_logits, target_index);
}

Action pid_target(const GridEnvironment& env, const Pose& pose, Cell goal_cell) {
  if (pose.cell == goal_cell) return Action::Stop;
  std::vector<Cell> path = shortest_path(env, pose.cell, goal_cell);
  Cell d{path[1].x - pose.cell.x, path[1].y - pose.cell.y};
  int target_heading = -1;
  for (int h : kHeadings) {
    if (heading_delta(h) == d) target_heading = h;
  }
  const int delta = (target_heading - pose.heading_deg + 360) % 360;
  if (delta == 0) return Action::MoveForward;
  if (delta == 270) return Action::TurnRight;
  return Action::TurnLeft;  // 90, and 180 resolves its tie leftward
}

double pid_loss(const Rollout& rollout) {
  const Episode& ep = *rollout.episode;
  double loss = 0.0;
  for (std::size_t t = 0; t < rollout.poses.size(); ++t) {
    Action target = pid_target(*ep.env, rollout.poses[t], ep.goal_cell);
    loss += cross_entropy(rollout.step_logits[t], static_cast<int>(target));
  }
  return loss;
}

double total_loss(double l_sap, double l_pid, double l_og, double l_pcon,
                  const TrainConfig& cfg) {
  if (cfg.gamma < 0.0 || cfg.alpha < 0.0) throw ConfigError("loss weights must be nonnegative");
  return cfg.gamma * l_sap + l_pid + l_og + cfg.alpha * l_pcon;
}

int candidate_obs_index(const GridEnvironment& env, const Pose& pose) {
  const std::uint64_t pos_key =
      (static_cast<std::uint64_t>(static_cast<std::uint32_t>(pose.cell.x)) << 32) |
      static_cast<std::uint32_t>(pose.cell.y);
  return static_cast<int>(mix_seed(env.seed(), pos_key, heading_index(pose.heading_deg)) >> 33);
}

Observation observe_at(const GridEnvironment& env, const Pose& pose,
                       const ObservationSpec& spec, int index) {
  return {index, pose, visible_objects(env, pose, spec)};
}

namespace {

double stage_alpha(const TrainConfig& cfg, int stage) {
  const double override_alpha = stage == 1 ? cfg.stage1_alpha : cfg.stage2_alpha;
  return override_alpha >= 0.0 ? override_alpha : cfg.alpha;
}

std::vector<std::array<Eigen::VectorXd, kNumActions>> render_candidates(
    const Backbone& backbone, const GridEnvironment& env, const std::vector<Pose>& poses,
    const ObservationSpec& spec) {
  std::vector<std::array<Eigen::VectorXd, kNumActions>> out(poses.size());
  for (std::size_t t = 0; t < poses.size(); ++t) {
    for (int a = 0; a < kNumActions; ++a) {
      Pose next = step(env, poses[t], static_cast<Action>(a)).pose;
      out[t][a] = backbone.render(env, observe_at(env, next, spec, candidate_obs_index(env, next)));
    }
  }
  return out;
}

std::vector<DetectionReport> detect_reports(const Episode& episode,
                                            const std::vector<Observation>& history,
                                            const TrainConfig& cfg, const DetectionFn& detect,
                                            std::uint64_t salt) {
  if (detect) return detect(episode, history);
  OracleConfig oc = cfg.detector;
  oc.seed = mix_seed(cfg.detector.seed, episode.seed, salt);
  return oracle_detect_history(*episode.env, history, oc);
}

ContrastBatch build_pcon_batch(const std::vector<DetectionReport>& reports,
                               const TrainConfig& cfg, std::mt19937_64& rng) {
  SelectionMatrix A = build_selection_matrix(reports, cfg.min_shared);
  return sample_batch(enumerate_positive_pairs(A), cfg.K, rng);
}

// Cross-entropy over scripted per-step targets plus optional grads; shared
// by SAP (stage 1, expert targets) and PID (stage 2, pseudo targets).
double scripted_step_loss(const PolicyParams& policy, const Head& head,
                          const std::vector<Pose>& poses,
                          const std::vector<std::array<Eigen::VectorXd, kNumActions>>& cand_raw,
                          const std::vector<Eigen::VectorXd>& raw_history,
                          const std::vector<Action>& targets, const Eigen::VectorXd& h_instr,
                          double weight, PolicyGrads* pg, HeadGrads* hg,
                          Eigen::VectorXd* dh_instr) {
  double loss = 0.0;
  Eigen::VectorXd state_sum = Eigen::VectorXd::Zero(raw_history.empty() ? 0 : raw_history[0].size());
  for (std::size_t t = 0; t < poses.size(); ++t) {
    state_sum += raw_history[t];
    Eigen::VectorXd state = state_sum / static_cast<double>(t + 1);
    std::array<Eigen::VectorXd, kNumActions> hidden;
    Eigen::Vector4d logits = raw_step_logits(policy, head, cand_raw[t], h_instr, state, nullptr,
                                             pg ? &hidden : nullptr);
    loss += cross_entropy(logits, static_cast<int>(targets[t]));
    if (pg) {
      Eigen::Vector4d dl = ce_dlogits(logits, static_cast<int>(targets[t]), weight);
      raw_step_backward(policy, head, cand_raw[t], h_instr, state, hidden, dl, pg, hg, dh_instr);
    }
  }
  return loss;
}

// L_pcon on the head outputs of a frozen history plus optional chain into
// head grads, scaled by alpha.
double pcon_component(const Head& head, const std::vector<Eigen::VectorXd>& raw_history,
                      const ContrastBatch& batch, double tau, double alpha, HeadGrads* hg) {
  if (batch.items.empty()) return 0.0;
  std::vector<Eigen::VectorXd> objs(raw_history.size());
  for (std::size_t n = 0; n < raw_history.size(); ++n) {
    objs[n] = head.forward(raw_history[n]).head(head.obj_dim());
  }
  if (!hg) return partial_infonce(batch, objs, tau).loss;

  PconGradients g = partial_infonce_backward(batch, objs, tau);
  Eigen::VectorXd dout = Eigen::VectorXd::Zero(head.out_dim());
  for (std::size_t n = 0; n < raw_history.size(); ++n) {
    if (g.d_features[n].isZero(0.0)) continue;
    dout.setZero();
    dout.head(head.obj_dim()) = alpha * g.d_features[n];
    head.backward(raw_history[n], dout, hg);
  }
  return g.report.loss;
}

}  // namespace

Stage1Batch prepare_stage1_batch(const Episode& episode, const Backbone& backbone,
                                 const ObservationSpec& spec, const TrainConfig& cfg,
                                 std::mt19937_64& rng, const DetectionFn& detect) {
  Stage1Batch batch;
  batch.episode = &episode;
  std::vector<Pose> poses = expert_pose_sequence(episode);
  batch.history = collect_history(*episode.env, poses, spec);
  batch.raw_history.reserve(batch.history.size());
  for (const auto& obs : batch.history) {
    batch.raw_history.push_back(backbone.render(*episode.env, obs));
  }
  batch.cand_raw = render_candidates(backbone, *episode.env, poses, spec);
  std::vector<DetectionReport> reports = detect_reports(episode, batch.history, cfg, detect, 1);
  batch.pcon_batch = build_pcon_batch(reports, cfg, rng);
  return batch;
}

LossBreakdown stage1_loss(const PolicyParams& policy, const Head& head, const Backbone& backbone,
                          const Stage1Batch& batch, const TrainConfig& cfg, PolicyGrads* pg,
                          HeadGrads* hg) {
  const Episode& ep = *batch.episode;
  const double alpha = stage_alpha(cfg, 1);
  LossBreakdown out;

  Eigen::VectorXd h_instr = embed_instruction(policy, ep.instruction);
  Eigen::VectorXd dh_instr = Eigen::VectorXd::Zero(h_instr.size());
  std::vector<Pose> poses = expert_pose_sequence(ep);

  out.sap = scripted_step_loss(policy, head, poses, batch.cand_raw, batch.raw_history,
                               ep.expert_actions, h_instr, cfg.gamma, pg, hg, &dh_instr);

  // Object grounding at the final pose; skipped when the target is hidden.
  const Observation& final_obs = batch.history.back();
  auto it = std::find(final_obs.visible_ids.begin(), final_obs.visible_ids.end(),
                      ep.target_object_id);
  if (it == final_obs.visible_ids.end()) {
    out.og_skipped = true;
  } else {
    const int target_idx = static_cast<int>(it - final_obs.visible_ids.begin());
    const int heading = final_obs.pose.heading_deg;
    std::vector<Eigen::VectorXd> raw_objs;
    std::vector<Eigen::VectorXd> feats;
    for (int id : final_obs.visible_ids) {
      raw_objs.push_back(backbone.mix_labels({ep.env->object(id).label}, heading));
      feats.push_back(head.forward(raw_objs.back()).head(head.obj_dim()));
    }
    Eigen::VectorXd logits = og_logits(policy, feats, h_instr);
    out.og = og_loss(logits, target_idx);
    if (pg) {
      Eigen::VectorXd ls = log_softmax(logits);
      Eigen::VectorXd w = policy.W_og * h_instr;
      Eigen::VectorXd dw = Eigen::VectorXd::Zero(w.size());
      Eigen::VectorXd dout = Eigen::VectorXd::Zero(head.out_dim());
      for (int c = 0; c < logits.size(); ++c) {
        const double dl = std::exp(ls[c]) - (c == target_idx ? 1.0 : 0.0);
        dw += dl * feats[c];
        dout.setZero();
        dout.head(head.obj_dim()) = dl * w;
        head.backward(raw_objs[c], dout, hg);
      }
      pg->dW_og += dw * h_instr.transpose();
      dh_instr += policy.W_og.transpose() * dw;
    }
  }

  out.pcon = pcon_component(head, batch.raw_history, batch.pcon_batch, cfg.tau, alpha, hg);

  if (pg) embed_backward(policy, ep.instruction, dh_instr, pg);

  out.total = cfg.gamma * out.sap + out.og + alpha * out.pcon;
  return out;
}

Rollout run_rollout(const PolicyParams& policy, const Head& head, const Backbone& backbone,
                    const ObservationSpec& spec, const Episode& episode, int step_cap) {
  if (step_cap < 0) {
    step_cap = 3 * static_cast<int>(episode.expert_actions.size()) + 8;
  }
  const GridEnvironment& env = *episode.env;
  Rollout rollout;
  rollout.episode = &episode;
  Eigen::VectorXd h_instr = embed_instruction(policy, episode.instruction);
  Eigen::VectorXd state_sum = Eigen::VectorXd::Zero(backbone.dim());
  Pose pose = episode.start;
  for (int t = 0; t < step_cap; ++t) {
    state_sum += backbone.render(env, observe_at(env, pose, spec, t));
    Eigen::VectorXd state = state_sum / static_cast<double>(t + 1);
    std::array<Eigen::VectorXd, kNumActions> cand_raw;
    for (int a = 0; a < kNumActions; ++a) {
      Pose next = step(env, pose, static_cast<Action>(a)).pose;
      cand_raw[a] = backbone.render(env, observe_at(env, next, spec, candidate_obs_index(env, next)));
    }
    Eigen::Vector4d logits = raw_step_logits(policy, head, cand_raw, h_instr, state, nullptr,
                                             nullptr);
    int best = 0;
    logits.maxCoeff(&best);
    Action action = static_cast<Action>(best);

    rollout.poses.push_back(pose);
    rollout.actions.push_back(action);
    rollout.step_logits.push_back(logits);
    if (action == Action::Stop) {
      rollout.stopped = true;
      break;
    }
    pose = step(env, pose, action).pose;
  }
  return rollout;
}

Stage2Batch prepare_stage2_batch(const PolicyParams& policy, const Head& head,
                                 const Backbone& backbone, const Episode& episode,
                                 const ObservationSpec& spec, const TrainConfig& cfg,
                                 std::mt19937_64& rng, const DetectionFn& detect) {
  Stage2Batch batch;
  batch.rollout = run_rollout(policy, head, backbone, spec, episode, cfg.step_cap);
  batch.history = collect_history(*episode.env, batch.rollout.poses, spec);
  batch.raw_history.reserve(batch.history.size());
  for (const auto& obs : batch.history) {
    batch.raw_history.push_back(backbone.render(*episode.env, obs));
  }
  batch.cand_raw = render_candidates(backbone, *episode.env, batch.rollout.poses, spec);
  std::vector<DetectionReport> reports = detect_reports(episode, batch.history, cfg, detect, rng());
  batch.pcon_batch = build_pcon_batch(reports, cfg, rng);
  return batch;
}

LossBreakdown stage2_loss(const PolicyParams& policy, const Head& head, const Backbone& backbone,
                          const Stage2Batch& batch, const TrainConfig& cfg, PolicyGrads* pg,
                          HeadGrads* hg) {
  const Episode& ep = *batch.rollout.episode;
  const double alpha = stage_alpha(cfg, 2);
  LossBreakdown out;

  Eigen::VectorXd h_instr = embed_instruction(policy, ep.instruction);
  Eigen::VectorXd dh_instr = Eigen::VectorXd::Zero(h_instr.size());

  std::vector<Action> targets;
  targets.reserve(batch.rollout.poses.size());
  for (const Pose& pose : batch.rollout.poses) {
    targets.push_back(pid_target(*ep.env, pose, ep.goal_cell));
  }
  out.pid = scripted_step_loss(policy, head, batch.rollout.poses, batch.cand_raw,
                               batch.raw_history, targets, h_instr, 1.0, pg, hg, &dh_instr);

  out.pcon = pcon_component(head, batch.raw_history, batch.pcon_batch, cfg.tau, alpha, hg);

  if (pg) embed_backward(policy, ep.instruction, dh_instr, pg);

  out.total = out.pid + alpha * out.pcon;
  return out;
}

std::vector<EpisodeResult> evaluate(const PolicyParams& policy, const Head& head,
                                    const Backbone& backbone, const ObservationSpec& spec,
                                    const std::vector<Episode>& episodes, const EvalConfig& cfg) {
  std::vector<EpisodeResult> results;
  results.reserve(episodes.size());
  for (const Episode& ep : episodes) {
    Rollout rollout = run_rollout(policy, head, backbone, spec, ep, cfg.step_cap);
    EpisodeResult r;
    r.env = ep.env;
    r.goal_cell = ep.goal_cell;
    r.success_threshold = cfg.success_threshold;
    r.shortest_len = bfs_distance(*ep.env, ep.start.cell, ep.goal_cell);
    Pose pose = ep.start;
    r.visited_cells.push_back(pose.cell);
    for (Action a : rollout.actions) {
      pose = step(*ep.env, pose, a).pose;
      r.visited_cells.push_back(pose.cell);
    }
    r.stop_cell = r.visited_cells.back();
    results.push_back(std::move(r));
  }
  return results;
}

namespace {

struct EpisodeCache {
  std::vector<Observation> history;
  std::vector<Eigen::VectorXd> raw_history;
  std::vector<std::array<Eigen::VectorXd, kNumActions>> cand_raw;
  std::vector<PositivePair> pairs;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const ModelConfig& model, const Vocabulary& vocab,
                  const std::vector<Episode>& train_episodes,
                  const std::vector<Episode>& val_episodes, const DetectionFn& detect) {
  if (train_episodes.empty()) throw ConfigError("training dataset is empty");
  if (model.head.in_dim != model.backbone.d0) {
    throw ConfigError("head input dim must equal backbone dim");
  }
  if (cfg.stage1_iters < 0 || cfg.stage2_iters < 0) {
    throw ConfigError("stage iteration counts must be nonnegative");
  }

  Backbone backbone(model.backbone);
  Head head(model.head);
  PolicyParams policy = make_policy(model.policy, vocab.size(), model.head.out_dim,
                                    model.backbone.d0, head.obj_dim());

  // Per-episode teacher-forcing context, fixed across iterations.
  std::vector<EpisodeCache> cache(train_episodes.size());
  for (std::size_t e = 0; e < train_episodes.size(); ++e) {
    const Episode& ep = train_episodes[e];
    std::vector<Pose> poses = expert_pose_sequence(ep);
    cache[e].history = collect_history(*ep.env, poses, model.obs);
    for (const auto& obs : cache[e].history) {
      cache[e].raw_history.push_back(backbone.render(*ep.env, obs));
    }
    cache[e].cand_raw = render_candidates(backbone, *ep.env, poses, model.obs);
    std::vector<DetectionReport> reports = detect_reports(ep, cache[e].history, cfg, detect, 1);
    cache[e].pairs = enumerate_positive_pairs(build_selection_matrix(reports, cfg.min_shared));
  }

  TrainResult result{policy, head, {}, 0, -1.0, -1};
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7472u));
  Sgd opt{cfg.lr, cfg.momentum, {}};

  const int policy_n = policy.param_count();
  Eigen::VectorXd params(policy_n + head.param_count());
  params << policy.param_vector(), head.param_vector();

  EvalConfig val_cfg{cfg.step_cap, cfg.success_threshold};
  auto maybe_validate = [&](int iter) {
    if (val_episodes.empty()) return;
    std::vector<EpisodeResult> rs = evaluate(policy, head, backbone, model.obs, val_episodes,
                                             val_cfg);
    const double spl_now = summarize(rs).spl;
    if (spl_now > result.best_val_spl) {
      result.best_val_spl = spl_now;
      result.best_iter = iter;
      result.policy = policy;
      result.head = head;
    }
  };

  std::vector<int> order(train_episodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  int iter = 0;
  for (int stage = 1; stage <= 2; ++stage) {
    const int stage_iters = stage == 1 ? cfg.stage1_iters : cfg.stage2_iters;
    for (int k = 0; k < stage_iters; ++k, ++iter) {
      if (k % order.size() == 0) std::shuffle(order.begin(), order.end(), rng);
      const int e = order[k % order.size()];
      const Episode& ep = train_episodes[e];

      PolicyGrads pg = zero_grads(policy);
      HeadGrads hg = head.zero_grads();
      LossBreakdown loss;
      if (stage == 1) {
        Stage1Batch batch;
        batch.episode = &ep;
        batch.history = cache[e].history;
        batch.raw_history = cache[e].raw_history;
        batch.cand_raw = cache[e].cand_raw;
        batch.pcon_batch = sample_batch(cache[e].pairs, cfg.K, rng);
        loss = stage1_loss(policy, head, backbone, batch, cfg, &pg, &hg);
        if (loss.og_skipped) ++result.og_skipped;
      } else {
        Stage2Batch batch = prepare_stage2_batch(policy, head, backbone, ep, model.obs, cfg, rng,
                                                 detect);
        loss = stage2_loss(policy, head, backbone, batch, cfg, &pg, &hg);
      }
      if (!std::isfinite(loss.total)) {
        throw NumericError("training diverged at iter " + std::to_string(iter + 1));
      }

      Eigen::VectorXd grad(params.size());
      grad << pg.to_vector(), hg.to_vector();
      opt.step(params, grad);
      policy.set_param_vector(params.head(policy_n));
      head.set_param_vector(params.tail(head.param_count()));

      result.log.push_back({iter + 1, stage, loss.sap, loss.og, loss.pid, loss.pcon, loss.total});
      const bool stage_end = k == stage_iters - 1;
      const bool interval_hit = cfg.eval_interval > 0 && (iter + 1) % cfg.eval_interval == 0;
      if (interval_hit || stage_end) maybe_validate(iter + 1);
    }
  }

  if (result.best_iter < 0) {
    // Never validated: hand back the final parameters.
    result.policy = policy;
    result.head = head;
  }
  return result;
}

}  // namespace wpcl
