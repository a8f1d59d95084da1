#pragma once

#include <cstdint>
#include <vector>

#include "bap/autodiff.hpp"

namespace bap {

// Linear warmup from 0 to `base`, then cosine decay from `base` to `floor`.
// The floor bounds the rate from below once warmup is over.
struct LrSchedule {
  double base = 1e-3;
  double warmup_fraction = 0.10;
  std::int64_t total_steps = 1;
  double floor = 1e-4;

  std::int64_t warmup_steps() const;
};

// Rate used for optimizer update number `step` (1-based; step 0 is the ramp
// start). Steps past the end raise ContractError.
double lr_at(const LrSchedule& sched, std::int64_t step);

// Decoupled-weight-decay Adam with fixed betas and epsilon. Moments live next
// to the parameters they belong to, in registration order.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamW(std::vector<Parameter*> params, double weight_decay);

  // One update at learning rate `lr`. Any non-finite gradient aborts before a
  // single parameter is touched, naming the offending parameter.
  void step(double lr);
  void zero_grad();

  std::int64_t steps() const { return step_; }
  double weight_decay() const { return weight_decay_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double weight_decay_;
  std::int64_t step_ = 0;
};

}  // namespace bap
