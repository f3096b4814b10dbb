// Copyright 2026 The rtformer-cpu Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reference kernels. These are the semantics every SIMD variant is tested
// against, so they stay deliberately plain.

#include "rtf/kernels.hpp"

namespace rtf::kernels::scalar {
namespace {

template <typename T>
void gemm_ref(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
              const T* a, std::int64_t lda, const T* b, std::int64_t ldb,
              bool accumulate, T* c, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate)
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T{0};
    // i-p-j order keeps the innermost loop contiguous over C and B rows.
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = ta ? a[p * lda + i] : a[i * lda + p];
      if (!tb) {
        const T* brow = b + p * ldb;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      }
    }
  }
}

}  // namespace

void sgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           bool acc, float* c, std::int64_t ldc) {
  gemm_ref(ta, tb, m, n, k, a, lda, b, ldb, acc, c, ldc);
}

void dgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
           bool acc, double* c, std::int64_t ldc) {
  gemm_ref(ta, tb, m, n, k, a, lda, b, ldb, acc, c, ldc);
}

void saxpy(std::int64_t n, float alpha, const float* x, float* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void daxpy(std::int64_t n, double alpha, const double* x, double* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float sdot(std::int64_t n, const float* x, const float* y) {
  float s = 0.f;
  for (std::int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}
double ddot(std::int64_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace rtf::kernels::scalar
