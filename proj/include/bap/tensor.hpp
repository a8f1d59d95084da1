#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bap {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor vector(std::vector<float> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values);
  static Tensor scalar(float value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Row view of a rank-2 tensor.
  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  float item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
  bool requires_grad_ = false;
};

// Throws NumericError naming `what` if any value is NaN or Inf.
void require_finite(std::span<const float> values, const std::string& what);

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

// Standard matrix product; a is m x k, b is k x n.
Tensor matmul(const Tensor& a, const Tensor& b);

// Unit-L2 rescaling of a rank-1 tensor. Zero (or subnormal) norm raises
// DegenerateInputError instead of returning zeros.
Tensor l2_normalize(const Tensor& v);

// u.v / (|u||v|), clamped into [-1, 1] against rounding.
double cosine_sim(std::span<const float> u, std::span<const float> v);
double cosine_sim(const Tensor& u, const Tensor& v);

// Elementwise helpers on rank-1 tensors used by the analysis modules.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, float s);

}  // namespace bap
