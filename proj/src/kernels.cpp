#include "bap/kernels.hpp"

namespace bap::kernels {

float dot(const float* a, const float* b, std::size_t n) {
  float s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      s[l] += a[i + l] * b[i + l];
    }
  }
  float tail = 0.0f;
  for (; i < n; ++i) {
    tail += a[i] * b[i];
  }
  return ((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7])) + tail;
}

namespace {

// Four dot products against the same right-hand row; shares the loads of b.
void dot4(const float* a0, const float* a1, const float* a2, const float* a3, const float* b,
          std::size_t n, float out[4]) {
  float s0[8] = {}, s1[8] = {}, s2[8] = {}, s3[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const float bv = b[i + l];
      s0[l] += a0[i + l] * bv;
      s1[l] += a1[i + l] * bv;
      s2[l] += a2[i + l] * bv;
      s3[l] += a3[i + l] * bv;
    }
  }
  float t0 = 0, t1 = 0, t2 = 0, t3 = 0;
  for (; i < n; ++i) {
    t0 += a0[i] * b[i];
    t1 += a1[i] * b[i];
    t2 += a2[i] * b[i];
    t3 += a3[i] * b[i];
  }
  auto fold = [](const float* s) {
    return ((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7]));
  };
  out[0] = fold(s0) + t0;
  out[1] = fold(s1) + t1;
  out[2] = fold(s2) + t2;
  out[3] = fold(s3) + t3;
}

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) {
        continue;
      }
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + i * k;
    const float* a1 = a0 + k;
    const float* a2 = a1 + k;
    const float* a3 = a2 + k;
    for (std::size_t j = 0; j < n; ++j) {
      float out[4];
      dot4(a0, a1, a2, a3, b + j * k, k, out);
      c[i * n + j] += out[0];
      c[(i + 1) * n + j] += out[1];
      c[(i + 2) * n + j] += out[2];
      c[(i + 3) * n + j] += out[3];
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] += dot(a + i * k, b + j * k, k);
    }
  }
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[p * m + i];
      if (av == 0.0f) {
        continue;
      }
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace bap::kernels
