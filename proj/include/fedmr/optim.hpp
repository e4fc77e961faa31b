#pragma once

#include "fedmr/tensor.hpp"

namespace fedmr {

struct SgdConfig {
  Scalar learning_rate = 0.01;
  Scalar momentum = 0.9;
  Scalar weight_decay = 1e-5;

  void validate() const;
};

// Momentum buffer. Starts empty; sized on the first step.
struct SgdState {
  Vector velocity;
  void reset() { velocity.resize(0); }
};

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v
void sgd_step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads,
              const SgdConfig& cfg, SgdState& state);

}  // namespace fedmr
