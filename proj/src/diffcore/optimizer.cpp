#include "dof/diffcore/optimizer.hpp"

#include <cmath>

#include "dof/common/errors.hpp"
#include "dof/simd/kernels.hpp"

namespace dof {

void Adam::step(std::span<Parameter* const> params, double lr) {
  for (const Parameter* p : params) {
    if (p->grad.size() != p->value.size()) {
      throw std::invalid_argument("Adam: gradient shape mismatch for parameter " + p->name);
    }
    if (!p->grad.all_finite()) {
      throw NumericError("Adam: non-finite gradient in parameter " + p->name);
    }
  }
  for (Parameter* p : params) {
    Moments& mo = state_[p->name];
    if (mo.m.size() != p->value.size()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
      mo.t = 0;
    }
    ++mo.t;
    const double t = static_cast<double>(mo.t);
    const simd::AdamCoefficients coef{config_.beta1,
                                      config_.beta2,
                                      config_.eps,
                                      lr,
                                      1.0 - std::pow(config_.beta1, t),
                                      1.0 - std::pow(config_.beta2, t)};
    if (config_.weight_decay != 0.0) {
      simd::axpy(-lr * config_.weight_decay, p->value.data(), p->value.data());
    }
    simd::adam_update(coef, p->grad.data(), mo.m.data(), mo.v.data(), p->value.data());
    p->zero_grad();
  }
}

std::uint64_t Adam::steps_taken(const std::string& name) const {
  const auto it = state_.find(name);
  return it == state_.end() ? 0 : it->second.t;
}

}  // namespace dof
