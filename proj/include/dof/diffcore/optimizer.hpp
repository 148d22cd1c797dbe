#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "dof/diffcore/graph.hpp"

namespace dof {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay: p ← p·(1 − lr·weight_decay) before each update.
  double weight_decay = 0.0;
};

/// Adaptive-moment optimizer. Moment estimates and the step counter are kept
/// per parameter name, so a parameter that sits out some steps (frozen
/// encoders) starts its own bias correction when it first updates.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update with learning rate `lr` using each parameter's
  /// accumulated grad, then zeroes the grads. Throws NumericError naming the
  /// parameter if a gradient is not finite; no parameter is modified then.
  void step(std::span<Parameter* const> params, double lr);

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps_taken(const std::string& name) const;

 private:
  struct Moments {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
  };

  AdamConfig config_;
  std::map<std::string, Moments> state_;
};

}  // namespace dof
