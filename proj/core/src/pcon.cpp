#include "wpcl/pcon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wpcl {

namespace {

constexpr double kNormEps = 1e-12;

double guarded_norm(const Eigen::VectorXd& v) { return std::max(v.norm(), kNormEps); }

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.dot(b) / (guarded_norm(a) * guarded_norm(b));
}

const Eigen::VectorXd& feature_at(const std::vector<Eigen::VectorXd>& features, int idx) {
  if (idx < 0 || idx >= static_cast<int>(features.size())) {
    throw ConfigError("contrast batch references feature index " + std::to_string(idx) +
                      " outside [0, " + std::to_string(features.size()) + ")");
  }
  return features[idx];
}

// One directed term: anchor, positive, negatives.
struct Term {
  int anchor;
  int positive;
  const std::vector<int>* negatives;
};

std::vector<Term> expand_terms(const ContrastBatch& batch, bool symmetrized) {
  std::vector<Term> terms;
  terms.reserve(batch.items.size() * (symmetrized ? 2 : 1));
  for (const auto& item : batch.items) {
    terms.push_back({item.i, item.j, &item.negatives});
    if (symmetrized) terms.push_back({item.j, item.i, &item.negatives});
  }
  return terms;
}

// d cos(u, v) / d u with epsilon-guarded norms.
Eigen::VectorXd dcos_du(const Eigen::VectorXd& u, const Eigen::VectorXd& v, double cos_uv) {
  const double nu = guarded_norm(u);
  const double nv = guarded_norm(v);
  return v / (nu * nv) - (cos_uv / (nu * nu)) * u;
}

}  // namespace

double cosine_q(const Eigen::VectorXd& h1, const Eigen::VectorXd& h2, double tau) {
  if (tau <= 0.0) throw ConfigError("temperature tau must be positive");
  if (h1.size() != h2.size()) throw ConfigError("cosine_q dimension mismatch");
  return std::exp(cosine(h1, h2) / tau);
}

namespace {

// Shared forward/backward walk; grads is optional.
LossReport infonce_impl(const ContrastBatch& batch, const std::vector<Eigen::VectorXd>& features,
                        double tau, bool symmetrized, std::vector<Eigen::VectorXd>* grads) {
  if (tau <= 0.0) throw ConfigError("temperature tau must be positive");
  LossReport report;
  if (grads) {
    grads->assign(features.size(), Eigen::VectorXd());
    for (std::size_t n = 0; n < features.size(); ++n) {
      (*grads)[n] = Eigen::VectorXd::Zero(features[n].size());
    }
  }

  const std::vector<Term> terms = expand_terms(batch, symmetrized);
  if (terms.empty()) return report;

  double loss_sum = 0.0;
  double pos_cos_sum = 0.0;
  double neg_cos_sum = 0.0;
  long neg_count = 0;
  long k_eff_sum = 0;
  const double inv_m = 1.0 / static_cast<double>(terms.size());

  for (const auto& term : terms) {
    const Eigen::VectorXd& u = feature_at(features, term.anchor);
    if (u.norm() < kNormEps) ++report.zero_norm_count;

    // Scores: positive first, then negatives.
    std::vector<int> others;
    others.reserve(1 + term.negatives->size());
    others.push_back(term.positive);
    for (int k : *term.negatives) others.push_back(k);

    std::vector<double> cos(others.size());
    std::vector<double> s(others.size());
    double s_max = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < others.size(); ++b) {
      cos[b] = cosine(u, feature_at(features, others[b]));
      s[b] = cos[b] / tau;
      s_max = std::max(s_max, s[b]);
    }
    double z = 0.0;
    for (double sb : s) z += std::exp(sb - s_max);
    const double lse = s_max + std::log(z);
    loss_sum += lse - s[0];

    pos_cos_sum += cos[0];
    for (std::size_t b = 1; b < s.size(); ++b) neg_cos_sum += cos[b];
    neg_count += static_cast<long>(s.size()) - 1;
    k_eff_sum += static_cast<long>(term.negatives->size());

    if (grads) {
      for (std::size_t b = 0; b < others.size(); ++b) {
        const double p = std::exp(s[b] - lse);
        const double d_s = (p - (b == 0 ? 1.0 : 0.0)) * inv_m;
        if (d_s == 0.0) continue;
        const double d_cos = d_s / tau;
        const Eigen::VectorXd& v = feature_at(features, others[b]);
        (*grads)[term.anchor] += d_cos * dcos_du(u, v, cos[b]);
        (*grads)[others[b]] += d_cos * dcos_du(v, u, cos[b]);
      }
    }
  }

  report.num_items = static_cast<int>(batch.items.size());
  report.loss = loss_sum * inv_m;
  report.pos_cos_mean = pos_cos_sum * inv_m;
  report.neg_cos_mean = neg_count > 0 ? neg_cos_sum / static_cast<double>(neg_count) : 0.0;
  report.mean_k_eff = static_cast<double>(k_eff_sum) * inv_m;
  if (grads) {
    double sq = 0.0;
    for (const auto& g : *grads) sq += g.squaredNorm();
    report.grad_norm = std::sqrt(sq);
  }
  if (!std::isfinite(report.loss)) throw NumericError("partial InfoNCE produced non-finite loss");
  return report;
}

}  // namespace

LossReport partial_infonce(const ContrastBatch& batch,
                           const std::vector<Eigen::VectorXd>& features, double tau,
                           bool symmetrized) {
  return infonce_impl(batch, features, tau, symmetrized, nullptr);
}

PconGradients partial_infonce_backward(const ContrastBatch& batch,
                                       const std::vector<Eigen::VectorXd>& features, double tau,
                                       bool symmetrized) {
  PconGradients out;
  out.report = infonce_impl(batch, features, tau, symmetrized, &out.d_features);
  return out;
}

ContrastBatch sample_batch(const std::vector<PositivePair>& pairs, int K, std::mt19937_64& rng) {
  ContrastBatch batch;
  batch.items.reserve(pairs.size());
  for (const auto& pair : pairs) {
    PositivePair item{pair.i, pair.j, pair.negatives};
    if (K >= 0 && static_cast<int>(item.negatives.size()) > K) {
      for (int t = 0; t < K; ++t) {
        std::uniform_int_distribution<int> pick(t, static_cast<int>(item.negatives.size()) - 1);
        std::swap(item.negatives[t], item.negatives[pick(rng)]);
      }
      item.negatives.resize(K);
      std::sort(item.negatives.begin(), item.negatives.end());
    }
    batch.items.push_back(std::move(item));
  }
  return batch;
}

LossReport pcon_train_step(Head& head, const std::vector<Eigen::VectorXd>& raw_features,
                           const ContrastBatch& batch, const PconConfig& cfg) {
  std::vector<Eigen::VectorXd> objs(raw_features.size());
  for (std::size_t n = 0; n < raw_features.size(); ++n) {
    objs[n] = head.forward(raw_features[n]).head(head.obj_dim());
  }

  PconGradients g = partial_infonce_backward(batch, objs, cfg.tau, cfg.symmetrized);

  HeadGrads grads = head.zero_grads();
  Eigen::VectorXd dout = Eigen::VectorXd::Zero(head.out_dim());
  for (std::size_t n = 0; n < raw_features.size(); ++n) {
    if (g.d_features[n].isZero(0.0)) continue;
    dout.setZero();
    dout.head(head.obj_dim()) = g.d_features[n];
    head.backward(raw_features[n], dout, &grads);
  }

  Eigen::VectorXd grad_vec = grads.to_vector();
  if (!grad_vec.allFinite()) throw NumericError("pcon gradient is non-finite");
  g.report.grad_norm = grad_vec.norm();
  if (cfg.learning_rate != 0.0) {
    head.set_param_vector(head.param_vector() - cfg.learning_rate * grad_vec);
  }
  return g.report;
}

}  // namespace wpcl
