#include "bap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bap/error.hpp"
#include "bap/kernels.hpp"

namespace bap {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) {
      os << 'x';
    }
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(bap::numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (bap::numel(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::scalar(float value) { return Tensor({1}, std::vector<float>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

std::span<float> Tensor::row(std::size_t r) {
  if (rank() != 2 || r >= shape_[0]) {
    throw DimensionError("row access on " + shape_str(shape_));
  }
  return std::span<float>(data_).subspan(r * shape_[1], shape_[1]);
}

std::span<const float> Tensor::row(std::size_t r) const {
  if (rank() != 2 || r >= shape_[0]) {
    throw DimensionError("row access on " + shape_str(shape_));
  }
  return std::span<const float>(data_).subspan(r * shape_[1], shape_[1]);
}

float Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (bap::numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), data_);
  out.requires_grad_ = requires_grad_;
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_finite(std::span<const float> values, const std::string& what) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + what);
    }
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return s;
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor c({m, n});
  kernels::gemm_nn(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  return c;
}

Tensor l2_normalize(const Tensor& v) {
  const double norm = l2_norm(v.data());
  if (!(norm > 1e-30) || !std::isfinite(norm)) {
    throw DegenerateInputError("l2_normalize: vector has zero norm");
  }
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
  }
  return out;
}

double cosine_sim(std::span<const float> u, std::span<const float> v) {
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) {
    throw DegenerateInputError("cosine_sim: zero-norm input");
  }
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

double cosine_sim(const Tensor& u, const Tensor& v) { return cosine_sim(u.data(), v.data()); }

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out[i] = a[i] + b[i];
  }
  return out;
}

Tensor scaled(const Tensor& a, float s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out[i] = a[i] * s;
  }
  return out;
}

}  // namespace bap
