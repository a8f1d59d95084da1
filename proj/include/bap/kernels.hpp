#pragma once

// Raw row-major GEMM kernels shared by tensor and autodiff code. All of them
// accumulate into `c` (callers zero it first when they want assignment).

#include <cstddef>

namespace bap::kernels {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);

// c[m x n] += a[k x m]^T * b[k x n]
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);

// Blocked float dot product with eight independent partial sums.
float dot(const float* a, const float* b, std::size_t n);

}  // namespace bap::kernels
