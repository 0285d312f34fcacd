#ifndef WPCL_OPTIM_HPP_
#define WPCL_OPTIM_HPP_

#include <Eigen/Dense>

#include "wpcl/error.hpp"

namespace wpcl {

// Plain SGD over a flat parameter vector, optional classical momentum.
struct Sgd {
  double lr = 0.05;
  double momentum = 0.0;
  Eigen::VectorXd velocity;  // lazily sized on first step

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (params.size() != grad.size()) throw ConfigError("sgd: param/grad size mismatch");
    if (!grad.allFinite()) throw NumericError("sgd: non-finite gradient");
    if (momentum != 0.0) {
      if (velocity.size() != params.size()) velocity = Eigen::VectorXd::Zero(params.size());
      velocity = momentum * velocity + grad;
      params -= lr * velocity;
    } else {
      params -= lr * grad;
    }
  }
};

}  // namespace wpcl

#endif  // WPCL_OPTIM_HPP_
