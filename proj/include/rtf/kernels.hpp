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

// Inner-loop arithmetic kernels. Every kernel has a portable scalar reference
// and an AVX2+FMA variant; the variant is chosen once at startup from CPUID
// and can be forced with RTF_KERNELS=scalar|avx2 or set_active().
//
// All matrices are row-major. gemm computes
//   C[m x n] = op(A)[m x k] * op(B)[k x n] + (accumulate ? C : 0)
// where op(X) is X or X^T according to the trans flags; lda/ldb/ldc are row
// strides of the stored (untransposed) arrays.

#pragma once

#include <cstdint>
#include <string_view>

namespace rtf::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
using GemmFn = void (*)(bool trans_a, bool trans_b, std::int64_t m,
                        std::int64_t n, std::int64_t k, const T* a,
                        std::int64_t lda, const T* b, std::int64_t ldb,
                        bool accumulate, T* c, std::int64_t ldc);

// y[i] += alpha * x[i]
template <typename T>
using AxpyFn = void (*)(std::int64_t n, T alpha, const T* x, T* y);

// sum_i x[i] * y[i]
template <typename T>
using DotFn = T (*)(std::int64_t n, const T* x, const T* y);

struct KernelTable {
  Isa isa;
  GemmFn<float> sgemm;
  GemmFn<double> dgemm;
  AxpyFn<float> saxpy;
  AxpyFn<double> daxpy;
  DotFn<float> sdot;
  DotFn<double> ddot;
};

bool cpu_supports(Isa isa);
const KernelTable& table(Isa isa);
const KernelTable& active();
void set_active(Isa isa);

template <typename T>
inline void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n,
                 std::int64_t k, const T* a, std::int64_t lda, const T* b,
                 std::int64_t ldb, bool accumulate, T* c, std::int64_t ldc) {
  if constexpr (sizeof(T) == 4)
    active().sgemm(ta, tb, m, n, k, a, lda, b, ldb, accumulate, c, ldc);
  else
    active().dgemm(ta, tb, m, n, k, a, lda, b, ldb, accumulate, c, ldc);
}

template <typename T>
inline void axpy(std::int64_t n, T alpha, const T* x, T* y) {
  if constexpr (sizeof(T) == 4)
    active().saxpy(n, alpha, x, y);
  else
    active().daxpy(n, alpha, x, y);
}

template <typename T>
inline T dot(std::int64_t n, const T* x, const T* y) {
  if constexpr (sizeof(T) == 4)
    return active().sdot(n, x, y);
  else
    return active().ddot(n, x, y);
}

namespace scalar {
void sgemm(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
           std::int64_t, const float*, std::int64_t, bool, float*, std::int64_t);
void dgemm(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
           std::int64_t, const double*, std::int64_t, bool, double*, std::int64_t);
void saxpy(std::int64_t, float, const float*, float*);
void daxpy(std::int64_t, double, const double*, double*);
float sdot(std::int64_t, const float*, const float*);
double ddot(std::int64_t, const double*, const double*);
}  // namespace scalar

namespace avx2 {
void sgemm(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
           std::int64_t, const float*, std::int64_t, bool, float*, std::int64_t);
void dgemm(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
           std::int64_t, const double*, std::int64_t, bool, double*, std::int64_t);
void saxpy(std::int64_t, float, const float*, float*);
void daxpy(std::int64_t, double, const double*, double*);
float sdot(std::int64_t, const float*, const float*);
double ddot(std::int64_t, const double*, const double*);
}  // namespace avx2

}  // namespace rtf::kernels
