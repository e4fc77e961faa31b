#include "fedmr/optim.hpp"

#include "fedmr/errors.hpp"

#include <string>

namespace fedmr {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

void sgd_step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads,
              const SgdConfig& cfg, SgdState& state) {
  if (grads.size() != params.size())
    throw ContractError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  if (state.velocity.size() == 0) state.velocity = Vector::Zero(params.size());
  if (state.velocity.size() != params.size())
    throw ContractError("sgd_step: momentum buffer length " +
                        std::to_string(state.velocity.size()) + " does not match parameters");
  state.velocity = cfg.momentum * state.velocity + grads + cfg.weight_decay * params;
  params -= cfg.learning_rate * state.velocity;
}

}  // namespace fedmr
