#include "bap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "bap/error.hpp"
#include "bap/kernels.hpp"

namespace bap {

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    std::fill(grad.storage().begin(), grad.storage().end(), 0.0f);
  }
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) {
    throw ContractError("use of an unbound Var");
  }
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  if (!node.needs_grad) {
    node.backprop = nullptr;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_view(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& param) {
  if (!grad_enabled_) {
    return constant_view(param.value);
  }
  Node n;
  n.borrowed = &param.value;
  n.needs_grad = true;
  n.param = &param;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::span<const std::size_t> inputs, Backprop backprop) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                               [this](std::size_t id) { return nodes_[id].needs_grad; });
  }
  n.backprop = std::move(backprop);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    n.grad = Tensor(value(id).shape());
  }
  return n.grad;
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(Var loss) {
  if (loss.tape_ != this) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  const Tensor& lv = value(loss.id());
  if (lv.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_str(lv.shape()));
  }
  if (!std::isfinite(lv[0])) {
    throw NumericError("backward: loss is not finite");
  }
  if (nodes_[loss.id()].needs_grad) {
    grad(loss.id())[0] = 1.0f;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty() || !n.backprop) {
        continue;
      }
      n.backprop(*this, i);
    }
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr) {
      continue;
    }
    Parameter& p = *n.param;
    if (p.grad.shape() != p.value.shape()) {
      p.grad = Tensor(p.value.shape());
    }
    if (!n.grad.empty()) {
      auto dst = p.grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] += src[k];
      }
    }
  }
  clear();
}

namespace {

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accumulate(Tensor& dst, std::span<const float> src) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] += src[i];
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = bap::matmul(av, bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t in[] = {ia, ib};
  return a.tape().record(std::move(out), in, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      kernels::gemm_nt(g.data().data(), t.value(ib).data().data(), t.grad(ia).data().data(), m, n, k);
    }
    if (t.needs_grad(ib)) {
      kernels::gemm_tn(t.value(ia).data().data(), g.data().data(), t.grad(ib).data().data(), k, m, n);
    }
  });
}

Var linear(Var x, Var weight) {
  require_same_tape(x, weight, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                         shape_str(wv.shape()));
  }
  const std::size_t batch = xv.dim(0), in_dim = xv.dim(1), out_dim = wv.dim(0);
  Tensor out({batch, out_dim});
  kernels::gemm_nt(xv.data().data(), wv.data().data(), out.data().data(), batch, in_dim, out_dim);
  const std::size_t ix = x.id(), iw = weight.id();
  const std::size_t in[] = {ix, iw};
  return x.tape().record(std::move(out), in,
                         [ix, iw, batch, in_dim, out_dim](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           if (t.needs_grad(ix)) {
                             kernels::gemm_nn(g.data().data(), t.value(iw).data().data(),
                                              t.grad(ix).data().data(), batch, out_dim, in_dim);
                           }
                           if (t.needs_grad(iw)) {
                             kernels::gemm_tn(g.data().data(), t.value(ix).data().data(),
                                              t.grad(iw).data().data(), out_dim, batch, in_dim);
                           }
                         });
}

Var add_bias(Var x, Var bias) {
  require_same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.numel() != xv.dim(1)) {
    throw DimensionError("add_bias: " + shape_str(xv.shape()) + " with bias " + shape_str(bv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] += bv[c];
    }
  }
  const std::size_t ix = x.id(), ib = bias.id();
  const std::size_t in[] = {ix, ib};
  return x.tape().record(std::move(out), in, [ix, ib, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ix)) {
      accumulate(t.grad(ix), g.data());
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          gb[c] += g[r * cols + c];
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out = bap::add(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t in[] = {ia, ib};
  return a.tape().record(std::move(out), in, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      accumulate(t.grad(ia), g.data());
    }
    if (t.needs_grad(ib)) {
      accumulate(t.grad(ib), g.data());
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = av[i] - bv[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t in[] = {ia, ib};
  return a.tape().record(std::move(out), in, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      accumulate(t.grad(ia), g.data());
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < gb.numel(); ++i) {
        gb[i] -= g[i];
      }
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = av[i] * bv[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t in[] = {ia, ib};
  return a.tape().record(std::move(out), in, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < ga.numel(); ++i) {
        ga[i] += g[i] * bv[i];
      }
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < gb.numel(); ++i) {
        gb[i] += g[i] * av[i];
      }
    }
  });
}

Var scale(Var a, float s) {
  Tensor out = scaled(a.value(), s);
  const std::size_t ia = a.id();
  const std::size_t in[] = {ia};
  return a.tape().record(std::move(out), in, [ia, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      ga[i] += s * g[i];
    }
  });
}

Var square(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = av[i] * av[i];
  }
  const std::size_t ia = a.id();
  const std::size_t in[] = {ia};
  return a.tape().record(std::move(out), in, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      ga[i] += 2.0f * av[i] * g[i];
    }
  });
}

Var gelu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = av[i];
    out[i] = static_cast<float>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
  }
  const std::size_t ia = a.id();
  const std::size_t in[] = {ia};
  return a.tape().record(std::move(out), in, [ia](Tape& t, std::size_t self) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    Tensor& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      const double x = av[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      ga[i] += static_cast<float>(g[i] * (cdf + x * pdf));
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (float v : a.value().data()) {
    s += v;
  }
  const std::size_t ia = a.id();
  const std::size_t in[] = {ia};
  return a.tape().record(Tensor::scalar(static_cast<float>(s)), in, [ia](Tape& t, std::size_t self) {
    const float g = t.grad(self)[0];
    Tensor& ga = t.grad(ia);
    for (float& v : ga.data()) {
      v += g;
    }
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  return scale(sum(a), 1.0f / static_cast<float>(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  const std::size_t in[] = {ia};
  return a.tape().record(std::move(out), in, [ia](Tape& t, std::size_t self) {
    accumulate(t.grad(ia), t.grad(self).data());
  });
}

Var avg_pool(Var x, std::size_t k) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || k == 0 || xv.dim(1) % k != 0 || xv.dim(2) % k != 0) {
    throw DimensionError("avg_pool: input " + shape_str(xv.shape()) + " not divisible by window " +
                         std::to_string(k));
  }
  const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  const float inv = 1.0f / static_cast<float>(k * k);
  Tensor out({batch, oh, ow, c});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const float* src = xv.data().data() + ((b * h + y) * w + xx) * c;
        float* dst = &out[((b * oh + y / k) * ow + xx / k) * c];
        for (std::size_t ch = 0; ch < c; ++ch) {
          dst[ch] += src[ch] * inv;
        }
      }
    }
  }
  const std::size_t ix = x.id();
  const std::size_t in[] = {ix};
  return x.tape().record(std::move(out), in,
                         [ix, batch, h, w, c, k, oh, ow, inv](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad(ix);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t y = 0; y < h; ++y) {
                               for (std::size_t xx = 0; xx < w; ++xx) {
                                 const float* src = g.data().data() + ((b * oh + y / k) * ow + xx / k) * c;
                                 float* dst = &gx[((b * h + y) * w + xx) * c];
                                 for (std::size_t ch = 0; ch < c; ++ch) {
                                   dst[ch] += src[ch] * inv;
                                 }
                               }
                             }
                           }
                         });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require_same_tape(x, weight, "conv2d");
  require_same_tape(x, bias, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 2 || stride == 0 || kernel == 0) {
    throw DimensionError("conv2d: bad operand ranks " + shape_str(xv.shape()) + ", " +
                         shape_str(wv.shape()));
  }
  const std::size_t batch = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
  const std::size_t patch = kernel * kernel * cin;
  const std::size_t cout = wv.dim(0);
  if (wv.dim(1) != patch || bias.value().numel() != cout) {
    throw DimensionError("conv2d: weight " + shape_str(wv.shape()) + " does not match kernel " +
                         std::to_string(kernel) + " and " + std::to_string(cin) + " input channels");
  }
  if (h + 2 * pad < kernel || w + 2 * pad < kernel) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kernel) / stride + 1;
  const std::size_t rows = batch * oh * ow;

  auto cols = std::make_shared<std::vector<float>>(rows * patch, 0.0f);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        float* dst = cols->data() + ((b * oh + oy) * ow + ox) * patch;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) {
            continue;
          }
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) {
              continue;
            }
            const float* src =
                xv.data().data() + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * cin;
            std::copy(src, src + cin, dst + (ky * kernel + kx) * cin);
          }
        }
      }
    }
  }
  Tensor out({batch, oh, ow, cout});
  kernels::gemm_nt(cols->data(), wv.data().data(), out.data().data(), rows, patch, cout);
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t co = 0; co < cout; ++co) {
      out[r * cout + co] += bv[co];
    }
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  const std::size_t in[] = {ix, iw, ib};
  return x.tape().record(
      std::move(out), in,
      [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(iw)) {
          kernels::gemm_tn(g.data().data(), cols->data(), t.grad(iw).data().data(), cout, rows, patch);
        }
        if (t.needs_grad(ib)) {
          Tensor& gb = t.grad(ib);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t co = 0; co < cout; ++co) {
              gb[co] += g[r * cout + co];
            }
          }
        }
        if (t.needs_grad(ix)) {
          std::vector<float> dcols(rows * patch, 0.0f);
          kernels::gemm_nn(g.data().data(), t.value(iw).data().data(), dcols.data(), rows, cout, patch);
          Tensor& gx = t.grad(ix);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const float* src = dcols.data() + ((b * oh + oy) * ow + ox) * patch;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) {
                    continue;
                  }
                  for (std::size_t kx = 0; kx < kernel; ++kx) {
                    const long ixx = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ixx < 0 || ixx >= static_cast<long>(w)) {
                      continue;
                    }
                    float* dst = &gx[((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ixx)) * cin];
                    const float* s = src + (ky * kernel + kx) * cin;
                    for (std::size_t c = 0; c < cin; ++c) {
                      dst[c] += s[c];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) {
    throw DimensionError("l2_normalize_rows expects [B x d], got " + shape_str(xv.shape()));
  }
  const std::size_t rows = xv.dim(0), d = xv.dim(1);
  Tensor out(xv.shape());
  std::vector<float> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = l2_norm(xv.row(r));
    if (!(n >= kMinNorm) || !std::isfinite(n)) {
      throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) + " has norm " +
                                 std::to_string(n));
    }
    norms[r] = static_cast<float>(n);
    for (std::size_t j = 0; j < d; ++j) {
      out[r * d + j] = static_cast<float>(xv[r * d + j] / n);
    }
  }
  const std::size_t ix = x.id();
  const std::size_t in[] = {ix};
  return x.tape().record(std::move(out), in,
                         [ix, rows, d, norms = std::move(norms)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& y = t.value(self);
                           Tensor& gx = t.grad(ix);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double yg = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               yg += static_cast<double>(y[r * d + j]) * g[r * d + j];
                             }
                             for (std::size_t j = 0; j < d; ++j) {
                               gx[r * d + j] += static_cast<float>(
                                   (g[r * d + j] - y[r * d + j] * yg) / norms[r]);
                             }
                           }
                         });
}

Var row_dot(Var x, const Tensor& targets) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || targets.shape() != xv.shape()) {
    throw DimensionError("row_dot: " + shape_str(xv.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  }
  const std::size_t rows = xv.dim(0), d = xv.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = static_cast<float>(dot(xv.row(r), targets.row(r)));
  }
  const std::size_t ix = x.id();
  const std::size_t in[] = {ix};
  return x.tape().record(std::move(out), in, [ix, rows, d, targets](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        gx[r * d + j] += g[r] * targets[r * d + j];
      }
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::uint32_t> labels,
                          std::span<const float> class_weights) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || labels.size() != lv.dim(0)) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(lv.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = lv.dim(0), classes = lv.dim(1);
  if (!class_weights.empty() && class_weights.size() != classes) {
    throw DimensionError("softmax_cross_entropy: class weight count mismatch");
  }
  std::vector<float> probs(rows * classes);
  std::vector<float> weights(rows);
  double total_w = 0.0;
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) {
      throw ContractError("softmax_cross_entropy: label out of range");
    }
    const float* z = lv.data().data() + r * classes;
    const float zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      denom += std::exp(static_cast<double>(z[c]) - zmax);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = static_cast<float>(std::exp(static_cast<double>(z[c]) - zmax) / denom);
    }
    const double logp = static_cast<double>(z[labels[r]]) - zmax - std::log(denom);
    weights[r] = class_weights.empty() ? 1.0f : class_weights[labels[r]];
    total_w += weights[r];
    loss -= weights[r] * logp;
  }
  if (!(total_w > 0.0)) {
    throw DegenerateInputError("softmax_cross_entropy: batch has zero total weight");
  }
  loss /= total_w;
  std::vector<std::uint32_t> label_copy(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  const std::size_t in[] = {il};
  return logits.tape().record(
      Tensor::scalar(static_cast<float>(loss)), in,
      [il, rows, classes, probs = std::move(probs), weights = std::move(weights), total_w,
       label_copy = std::move(label_copy)](Tape& t, std::size_t self) {
        const float g = t.grad(self)[0];
        Tensor& gl = t.grad(il);
        for (std::size_t r = 0; r < rows; ++r) {
          const double scale_r = g * weights[r] / total_w;
          for (std::size_t c = 0; c < classes; ++c) {
            const double target = (c == label_copy[r]) ? 1.0 : 0.0;
            gl[r * classes + c] += static_cast<float>(scale_r * (probs[r * classes + c] - target));
          }
        }
      });
}

}  // namespace bap
