#include "wpcl/repr.hpp"

#include <cmath>
#include <random>

#include "wpcl/rng.hpp"

namespace wpcl {

int split_obj_dim(int d, double lambda) {
  if (d <= 0) throw ConfigError("feature dimension must be positive");
  if (lambda <= 0.0 || lambda >= 1.0) throw ConfigError("lambda must be in (0, 1)");
  const int obj_dim = static_cast<int>(std::lround(lambda * d));
  if (obj_dim < 1 || obj_dim > d - 1) {
    throw ConfigError("lambda*d rounds to an empty segment (obj_dim=" +
                      std::to_string(obj_dim) + ", d=" + std::to_string(d) + ")");
  }
  return obj_dim;
}

ObjectEmbeddingTable::ObjectEmbeddingTable(int dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim_ <= 0) throw ConfigError("embedding dimension must be positive");
}

const Eigen::VectorXd& ObjectEmbeddingTable::embedding(const std::string& label) const {
  auto it = cache_.find(label);
  if (it != cache_.end()) return it->second;

  // Keyed by label content only, so embeddings agree across environments.
  std::mt19937_64 rng(mix_seed(seed_, fnv1a64(label)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = gauss(rng);
  double norm = v.norm();
  if (norm <= 0.0) {
    v.setZero();
    v[0] = 1.0;
  } else {
    v /= norm;
  }
  return cache_.emplace(label, std::move(v)).first->second;
}

namespace {

Eigen::MatrixXd orthogonal_mixer(int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (int c = 0; c < d; ++c) {
    for (int r = 0; r < d; ++r) g(r, c) = gauss(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c) {
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  }
  return q;
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg)
    : cfg_(cfg), table_(cfg.d0, mix_seed(cfg.seed, 0x656d62u)) {
  if (cfg_.d0 <= 0) throw ConfigError("backbone dimension must be positive");
  if (cfg_.noise_sigma < 0.0) throw ConfigError("noise_sigma must be nonnegative");
  for (int h = 0; h < 4; ++h) {
    mixers_[h] = orthogonal_mixer(cfg_.d0, mix_seed(cfg_.seed, 0x6d6978u, h));
  }
}

const Eigen::MatrixXd& Backbone::mixer(int heading_deg) const {
  return mixers_[heading_index(heading_deg)];
}

Eigen::VectorXd Backbone::mix_labels(const std::vector<std::string>& labels,
                                     int heading_deg) const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(cfg_.d0);
  for (const auto& label : labels) sum += table_.embedding(label);
  return mixer(heading_deg) * sum;
}

Eigen::VectorXd Backbone::render(const GridEnvironment& env, const Observation& obs) const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(cfg_.d0);
  for (int id : obs.visible_ids) sum += table_.embedding(env.object(id).label);
  Eigen::VectorXd z = mixer(obs.pose.heading_deg) * sum;
  if (cfg_.noise_sigma > 0.0) {
    std::mt19937_64 rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(obs.index), 0x7a6eu));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < cfg_.d0; ++i) z[i] += cfg_.noise_sigma * gauss(rng);
  }
  return z;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> split_features(const VisualFeature& h) {
  const int d = static_cast<int>(h.values.size());
  if (h.obj_dim < 1 || h.obj_dim > d - 1) {
    throw ConfigError("feature split requires 1 <= obj_dim <= d-1");
  }
  return {h.values.head(h.obj_dim), h.values.tail(d - h.obj_dim)};
}

Eigen::VectorXd h_objs(const VisualFeature& h) { return split_features(h).first; }
Eigen::VectorXd h_flex(const VisualFeature& h) { return split_features(h).second; }

namespace {

void xavier_init(Eigen::MatrixXd& m, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (m.rows() + m.cols()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (int c = 0; c < m.cols(); ++c) {
    for (int r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
  }
}

void append_flat(Eigen::VectorXd& out, int& at, const Eigen::MatrixXd& m) {
  out.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  at += static_cast<int>(m.size());
}

void read_flat(const Eigen::VectorXd& in, int& at, Eigen::MatrixXd& m) {
  Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = in.segment(at, m.size());
  at += static_cast<int>(m.size());
}

void read_flat(const Eigen::VectorXd& in, int& at, Eigen::VectorXd& v) {
  v = in.segment(at, v.size());
  at += static_cast<int>(v.size());
}

void append_flat(Eigen::VectorXd& out, int& at, const Eigen::VectorXd& v) {
  out.segment(at, v.size()) = v;
  at += static_cast<int>(v.size());
}

}  // namespace

Head::Head(const HeadConfig& cfg) : cfg_(cfg) {
  if (cfg_.in_dim <= 0 || cfg_.out_dim <= 0) throw ConfigError("head dims must be positive");
  if (cfg_.hidden_dim < 0) throw ConfigError("head hidden_dim must be nonnegative");
  obj_dim_ = split_obj_dim(cfg_.out_dim, cfg_.lambda);

  std::mt19937_64 rng(mix_seed(cfg_.seed, 0x68656164u));
  if (two_layer()) {
    W1.resize(cfg_.hidden_dim, cfg_.in_dim);
    b1 = Eigen::VectorXd::Zero(cfg_.hidden_dim);
    W2.resize(cfg_.out_dim, cfg_.hidden_dim);
    b2 = Eigen::VectorXd::Zero(cfg_.out_dim);
    xavier_init(W1, rng);
    xavier_init(W2, rng);
  } else {
    W1.resize(cfg_.out_dim, cfg_.in_dim);
    b1 = Eigen::VectorXd::Zero(cfg_.out_dim);
    W2.resize(0, 0);
    b2.resize(0);
    xavier_init(W1, rng);
  }
}

Eigen::VectorXd Head::forward(const Eigen::VectorXd& z) const {
  if (z.size() != cfg_.in_dim) throw ConfigError("head input dimension mismatch");
  if (!two_layer()) return W1 * z + b1;
  return W2 * (W1 * z + b1).array().tanh().matrix() + b2;
}

VisualFeature Head::encode(const Eigen::VectorXd& z) const { return {forward(z), obj_dim_}; }

Eigen::VectorXd Head::backward(const Eigen::VectorXd& z, const Eigen::VectorXd& dout,
                               HeadGrads* grads) const {
  if (z.size() != cfg_.in_dim || dout.size() != cfg_.out_dim) {
    throw ConfigError("head backward dimension mismatch");
  }
  if (!two_layer()) {
    if (grads) {
      grads->dW1 += dout * z.transpose();
      grads->db1 += dout;
    }
    return W1.transpose() * dout;
  }
  Eigen::VectorXd h = (W1 * z + b1).array().tanh().matrix();
  Eigen::VectorXd dh = W2.transpose() * dout;
  Eigen::VectorXd da = dh.array() * (1.0 - h.array().square());
  if (grads) {
    grads->dW2 += dout * h.transpose();
    grads->db2 += dout;
    grads->dW1 += da * z.transpose();
    grads->db1 += da;
  }
  return W1.transpose() * da;
}

HeadGrads Head::zero_grads() const {
  HeadGrads g;
  g.dW1 = Eigen::MatrixXd::Zero(W1.rows(), W1.cols());
  g.db1 = Eigen::VectorXd::Zero(b1.size());
  g.dW2 = Eigen::MatrixXd::Zero(W2.rows(), W2.cols());
  g.db2 = Eigen::VectorXd::Zero(b2.size());
  return g;
}

int Head::param_count() const {
  return static_cast<int>(W1.size() + b1.size() + W2.size() + b2.size());
}

Eigen::VectorXd Head::param_vector() const {
  Eigen::VectorXd v(param_count());
  int at = 0;
  append_flat(v, at, W1);
  append_flat(v, at, b1);
  append_flat(v, at, W2);
  append_flat(v, at, b2);
  return v;
}

void Head::set_param_vector(const Eigen::VectorXd& v) {
  if (v.size() != param_count()) throw ConfigError("head parameter vector size mismatch");
  int at = 0;
  read_flat(v, at, W1);
  read_flat(v, at, b1);
  read_flat(v, at, W2);
  read_flat(v, at, b2);
}

void HeadGrads::add_scaled(const HeadGrads& other, double scale) {
  dW1 += scale * other.dW1;
  db1 += scale * other.db1;
  if (dW2.size() > 0) dW2 += scale * other.dW2;
  if (db2.size() > 0) db2 += scale * other.db2;
}

Eigen::VectorXd HeadGrads::to_vector() const {
  Eigen::VectorXd v(dW1.size() + db1.size() + dW2.size() + db2.size());
  int at = 0;
  append_flat(v, at, dW1);
  append_flat(v, at, db1);
  append_flat(v, at, dW2);
  append_flat(v, at, db2);
  return v;
}

}  // namespace wpcl
