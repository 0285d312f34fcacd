#ifndef WPCL_REPR_HPP_
#define WPCL_REPR_HPP_

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wpcl/envsim.hpp"
#include "wpcl/error.hpp"

namespace wpcl {

// Object-segment width of a d-dimensional feature under split fraction
// lambda: round(lambda*d). Throws ConfigError when the split would leave
// either segment empty.
int split_obj_dim(int d, double lambda);

// Fixed unit embedding per label, deterministic in (seed, label) and shared
// across environments.
class ObjectEmbeddingTable {
 public:
  ObjectEmbeddingTable(int dim, std::uint64_t seed);

  int dim() const { return dim_; }
  const Eigen::VectorXd& embedding(const std::string& label) const;

 private:
  int dim_ = 0;
  std::uint64_t seed_ = 0;
  mutable std::map<std::string, Eigen::VectorXd> cache_;
};

struct BackboneConfig {
  int d0 = 64;               // raw feature dimension
  double noise_sigma = 0.0;  // per-render Gaussian noise
  std::uint64_t seed = 0;
};

// Frozen pretrained-backbone surrogate. Raw features entangle scene content
// with heading through four fixed orthogonal mixers (spectral norm 1), so a
// viewpoint-agnostic readout has to be learned on top.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg);

  int dim() const { return cfg_.d0; }
  const BackboneConfig& config() const { return cfg_; }
  const ObjectEmbeddingTable& table() const { return table_; }
  const Eigen::MatrixXd& mixer(int heading_deg) const;

  // z = M_heading * sum(e_label(visible)) + noise; noise stream keyed by
  // (cfg.seed, obs.index).
  Eigen::VectorXd render(const GridEnvironment& env, const Observation& obs) const;

  // Noise-free mix of explicit labels under a heading.
  Eigen::VectorXd mix_labels(const std::vector<std::string>& labels, int heading_deg) const;

 private:
  BackboneConfig cfg_;
  ObjectEmbeddingTable table_;
  std::array<Eigen::MatrixXd, 4> mixers_;
};

inline Eigen::VectorXd render_raw_feature(const Backbone& backbone, const GridEnvironment& env,
                                          const Observation& obs) {
  return backbone.render(env, obs);
}

// Trainable projection head output with its configured lambda split.
struct VisualFeature {
  Eigen::VectorXd values;
  int obj_dim = 0;
};

std::pair<Eigen::VectorXd, Eigen::VectorXd> split_features(const VisualFeature& h);
Eigen::VectorXd h_objs(const VisualFeature& h);
Eigen::VectorXd h_flex(const VisualFeature& h);

struct HeadConfig {
  int in_dim = 64;        // d0
  int out_dim = 512;      // d
  double lambda = 0.2;
  int hidden_dim = 0;     // 0: single affine layer; >0: two-layer tanh MLP
  std::uint64_t seed = 0;
};

struct HeadGrads {
  Eigen::MatrixXd dW1;
  Eigen::VectorXd db1;
  Eigen::MatrixXd dW2;
  Eigen::VectorXd db2;

  void add_scaled(const HeadGrads& other, double scale);
  Eigen::VectorXd to_vector() const;
};

// Projection head d0 -> d with the lambda split. Single affine layer by
// default; optional tanh hidden layer. Members are open for tests.
class Head {
 public:
  explicit Head(const HeadConfig& cfg);

  const HeadConfig& config() const { return cfg_; }
  int in_dim() const { return cfg_.in_dim; }
  int out_dim() const { return cfg_.out_dim; }
  int obj_dim() const { return obj_dim_; }
  bool two_layer() const { return cfg_.hidden_dim > 0; }

  Eigen::VectorXd forward(const Eigen::VectorXd& z) const;
  VisualFeature encode(const Eigen::VectorXd& z) const;

  // Accumulates d(loss)/d(params) into grads given upstream d(loss)/d(out);
  // returns d(loss)/d(z).
  Eigen::VectorXd backward(const Eigen::VectorXd& z, const Eigen::VectorXd& dout,
                           HeadGrads* grads) const;

  HeadGrads zero_grads() const;
  int param_count() const;
  Eigen::VectorXd param_vector() const;
  void set_param_vector(const Eigen::VectorXd& v);

  Eigen::MatrixXd W1;  // hidden x in (two-layer) or out x in (single)
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;  // out x hidden; empty when single-layer
  Eigen::VectorXd b2;

 private:
  HeadConfig cfg_;
  int obj_dim_ = 0;
};

}  // namespace wpcl

#endif  // WPCL_REPR_HPP_
