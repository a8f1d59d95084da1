#pragma once

// Central finite-difference oracle shared by the gradient tests.
//
// A probe maps parameters to an output of any shape; the checked scalar is the
// contraction of that output with fixed weights, accumulated in double so the
// oracle itself adds no float32 rounding. Perturbations use the step actually
// representable in float32 rather than the nominal h.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bap/autodiff.hpp"
#include "bap/rng.hpp"

namespace bap::testing {

using ProbeFn = std::function<Var(Tape&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Relative error whose denominator is floored at 1. Float32 forward values
// carry roughly 1e-4 of absolute noise into a central difference at h=1e-3,
// so gradients below unit magnitude are held to an absolute 1e-3 instead.
inline double rel_err(double a, double n) {
  const double denom = std::max({std::abs(a), std::abs(n), 1.0});
  return std::abs(a - n) / denom;
}

inline double contract(const Tensor& out, const Tensor* weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    s += static_cast<double>(out[i]) * (weights ? (*weights)[i] : 1.0f);
  }
  return s;
}

inline double eval_probe(const ProbeFn& fn, const Tensor* weights) {
  Tape tape(false);
  return contract(fn(tape).value(), weights);
}

inline void analytic_grads(const ProbeFn& fn, const Tensor* weights,
                           const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    p->zero_grad();
  }
  Tape tape;
  Var out = fn(tape);
  Var loss = weights ? sum(mul(out, tape.constant_view(*weights))) : sum(out);
  tape.backward(loss);
}

// Entry-wise check. Every entry of every parameter is perturbed unless
// `max_entries` caps it, in which case a random subset is drawn.
inline GradCheck check_entries(const ProbeFn& fn, const Tensor* weights,
                               const std::vector<Parameter*>& params, Rng& rng, double h = 1e-3,
                               std::size_t max_entries = 0) {
  analytic_grads(fn, weights, params);
  GradCheck out;
  for (Parameter* p : params) {
    std::vector<std::size_t> idx;
    if (max_entries > 0 && p->value.numel() > max_entries) {
      idx = rng.sample_without_replacement(p->value.numel(), max_entries);
    } else {
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        idx.push_back(i);
      }
    }
    for (std::size_t i : idx) {
      const float saved = p->value[i];
      const float hi = saved + static_cast<float>(h);
      const float lo = saved - static_cast<float>(h);
      p->value[i] = hi;
      const double up = eval_probe(fn, weights);
      p->value[i] = lo;
      const double down = eval_probe(fn, weights);
      p->value[i] = saved;
      const double numeric = (up - down) / (static_cast<double>(hi) - lo);
      const double e = rel_err(p->grad[i], numeric);
      if (e > out.max_rel_err) {
        out.max_rel_err = e;
        out.worst_analytic = p->grad[i];
        out.worst_numeric = numeric;
      }
      ++out.checked;
    }
  }
  return out;
}

// Directional check: compares g.u with the central difference along a random
// Gaussian direction u that moves all parameters at once.
inline GradCheck check_directional(const ProbeFn& fn, const Tensor* weights,
                                   const std::vector<Parameter*>& params, Rng& rng,
                                   int directions, double h = 1e-3) {
  analytic_grads(fn, weights, params);
  GradCheck out;
  for (int d = 0; d < directions; ++d) {
    std::vector<std::vector<float>> saved;
    std::vector<std::vector<float>> up_vals, down_vals;
    double analytic_up = 0.0, analytic_down = 0.0;
    for (Parameter* p : params) {
      saved.push_back(p->value.storage());
      std::vector<float> u(p->value.numel()), dn(p->value.numel());
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double step = h * rng.normal();
        u[i] = static_cast<float>(saved.back()[i] + step);
        dn[i] = static_cast<float>(saved.back()[i] - step);
        // Exact representable displacements, split so each side is weighted.
        analytic_up += (static_cast<double>(u[i]) - saved.back()[i]) * p->grad[i];
        analytic_down += (static_cast<double>(saved.back()[i]) - dn[i]) * p->grad[i];
      }
      up_vals.push_back(std::move(u));
      down_vals.push_back(std::move(dn));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k]->value.storage() = up_vals[k];
    }
    const double up = eval_probe(fn, weights);
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k]->value.storage() = down_vals[k];
    }
    const double down = eval_probe(fn, weights);
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k]->value.storage() = saved[k];
    }
    // Both quantities are normalized by h so they read as a derivative.
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = (analytic_up + analytic_down) / (2.0 * h);
    const double e = rel_err(analytic, numeric);
    if (e > out.max_rel_err) {
      out.max_rel_err = e;
      out.worst_analytic = analytic;
      out.worst_numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

}  // namespace bap::testing
