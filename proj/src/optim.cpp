#include "bap/optim.hpp"

#include <cmath>
#include <numbers>

#include "bap/error.hpp"

namespace bap {

std::int64_t LrSchedule::warmup_steps() const {
  return static_cast<std::int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

double lr_at(const LrSchedule& sched, std::int64_t step) {
  if (step < 0 || step > sched.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(sched.total_steps) + "]");
  }
  const std::int64_t warm = sched.warmup_steps();
  if (step < warm) {
    return sched.base * static_cast<double>(step) / static_cast<double>(warm);
  }
  const std::int64_t span = sched.total_steps - warm;
  if (span <= 0) {
    return sched.base;
  }
  const double progress = static_cast<double>(step - warm) / static_cast<double>(span);
  return sched.floor + (sched.base - sched.floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Parameter*> params, double weight_decay)
    : params_(std::move(params)), weight_decay_(weight_decay) {
  if (weight_decay < 0.0) {
    throw ConfigError("AdamW: negative weight decay");
  }
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) {
    p->zero_grad();
  }
}

void AdamW::step(double lr) {
  for (Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape()) {
      throw DimensionError("AdamW: gradient of '" + p->name + "' has shape " +
                           shape_str(p->grad.shape()) + ", expected " + shape_str(p->value.shape()));
    }
    if (!p->grad.all_finite()) {
      throw NumericError("AdamW: non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
  const float decay = static_cast<float>(1.0 - lr * weight_decay_);
  const float b1 = static_cast<float>(kBeta1);
  const float b2 = static_cast<float>(kBeta2);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(kEps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    float* w = params_[k]->value.data().data();
    const float* g = params_[k]->grad.data().data();
    float* m = m_[k].data().data();
    float* v = v_[k].data().data();
    const std::size_t n = params_[k]->value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      w[i] *= decay;
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace bap
