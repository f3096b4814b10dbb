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

// AVX2+FMA kernels. Only the functions tagged RTF_AVX2 execute AVX2
// instructions; packing and buffer management stay in baseline code so the
// translation unit is safe to link into binaries that run on older CPUs.

#include <algorithm>
#include <cstring>
#include <vector>

#include "rtf/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define RTF_HAVE_X86 1
#define RTF_AVX2 __attribute__((target("avx2,fma")))
#else
#define RTF_HAVE_X86 0
#define RTF_AVX2
#endif

namespace rtf::kernels::avx2 {

#if RTF_HAVE_X86
namespace {

// Panel widths: two ymm registers per C row.
constexpr std::int64_t kPanelD = 8;
constexpr std::int64_t kPanelS = 16;
constexpr std::int64_t kBlockK = 256;
constexpr std::int64_t kRows = 4;

template <int R>
RTF_AVX2 void micro_d(std::int64_t kc, const double* a, std::int64_t lda,
                      const double* bp, bool acc, double* c, std::int64_t ldc,
                      std::int64_t ncols) {
  __m256d s0[R], s1[R];
  for (int r = 0; r < R; ++r) {
    s0[r] = _mm256_setzero_pd();
    s1[r] = _mm256_setzero_pd();
  }
  for (std::int64_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp + p * kPanelD);
    const __m256d b1 = _mm256_loadu_pd(bp + p * kPanelD + 4);
    for (int r = 0; r < R; ++r) {
      const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
      s0[r] = _mm256_fmadd_pd(av, b0, s0[r]);
      s1[r] = _mm256_fmadd_pd(av, b1, s1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    double* crow = c + r * ldc;
    if (ncols == kPanelD) {
      if (acc) {
        s0[r] = _mm256_add_pd(s0[r], _mm256_loadu_pd(crow));
        s1[r] = _mm256_add_pd(s1[r], _mm256_loadu_pd(crow + 4));
      }
      _mm256_storeu_pd(crow, s0[r]);
      _mm256_storeu_pd(crow + 4, s1[r]);
    } else {
      alignas(32) double tmp[kPanelD];
      _mm256_store_pd(tmp, s0[r]);
      _mm256_store_pd(tmp + 4, s1[r]);
      for (std::int64_t j = 0; j < ncols; ++j) crow[j] = acc ? crow[j] + tmp[j] : tmp[j];
    }
  }
}

template <int R>
RTF_AVX2 void micro_s(std::int64_t kc, const float* a, std::int64_t lda,
                      const float* bp, bool acc, float* c, std::int64_t ldc,
                      std::int64_t ncols) {
  __m256 s0[R], s1[R];
  for (int r = 0; r < R; ++r) {
    s0[r] = _mm256_setzero_ps();
    s1[r] = _mm256_setzero_ps();
  }
  for (std::int64_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp + p * kPanelS);
    const __m256 b1 = _mm256_loadu_ps(bp + p * kPanelS + 8);
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      s0[r] = _mm256_fmadd_ps(av, b0, s0[r]);
      s1[r] = _mm256_fmadd_ps(av, b1, s1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    float* crow = c + r * ldc;
    if (ncols == kPanelS) {
      if (acc) {
        s0[r] = _mm256_add_ps(s0[r], _mm256_loadu_ps(crow));
        s1[r] = _mm256_add_ps(s1[r], _mm256_loadu_ps(crow + 8));
      }
      _mm256_storeu_ps(crow, s0[r]);
      _mm256_storeu_ps(crow + 8, s1[r]);
    } else {
      alignas(32) float tmp[kPanelS];
      _mm256_store_ps(tmp, s0[r]);
      _mm256_store_ps(tmp + 8, s1[r]);
      for (std::int64_t j = 0; j < ncols; ++j) crow[j] = acc ? crow[j] + tmp[j] : tmp[j];
    }
  }
}

template <typename T>
struct Micro;
template <>
struct Micro<double> {
  static constexpr std::int64_t width = kPanelD;
  template <int R>
  static void run(std::int64_t kc, const double* a, std::int64_t lda,
                  const double* bp, bool acc, double* c, std::int64_t ldc,
                  std::int64_t ncols) {
    micro_d<R>(kc, a, lda, bp, acc, c, ldc, ncols);
  }
};
template <>
struct Micro<float> {
  static constexpr std::int64_t width = kPanelS;
  template <int R>
  static void run(std::int64_t kc, const float* a, std::int64_t lda,
                  const float* bp, bool acc, float* c, std::int64_t ldc,
                  std::int64_t ncols) {
    micro_s<R>(kc, a, lda, bp, acc, c, ldc, ncols);
  }
};

template <typename T>
struct Scratch {
  std::vector<T> a;
  std::vector<T> b;
};

template <typename T>
Scratch<T>& scratch() {
  thread_local Scratch<T> s;
  return s;
}

// Packs op(B) (k x n) into column panels of width W, each panel stored as k
// contiguous rows of W values with zero padding past column n.
template <typename T>
void pack_b(bool tb, std::int64_t n, std::int64_t k, const T* b,
            std::int64_t ldb, std::vector<T>& out) {
  constexpr std::int64_t W = Micro<T>::width;
  const std::int64_t panels = (n + W - 1) / W;
  out.assign(static_cast<std::size_t>(panels * k * W), T{0});
  for (std::int64_t pn = 0; pn < panels; ++pn) {
    const std::int64_t j0 = pn * W;
    const std::int64_t w = std::min(W, n - j0);
    T* dst = out.data() + pn * k * W;
    if (!tb) {
      for (std::int64_t p = 0; p < k; ++p)
        std::memcpy(dst + p * W, b + p * ldb + j0, static_cast<std::size_t>(w) * sizeof(T));
    } else {
      for (std::int64_t j = 0; j < w; ++j) {
        const T* src = b + (j0 + j) * ldb;
        for (std::int64_t p = 0; p < k; ++p) dst[p * W + j] = src[p];
      }
    }
  }
}

template <typename T>
void gemm_avx2(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
               const T* a, std::int64_t lda, const T* b, std::int64_t ldb,
               bool accumulate, T* c, std::int64_t ldc) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate)
      for (std::int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    return;
  }
  constexpr std::int64_t W = Micro<T>::width;
  auto& s = scratch<T>();
  const T* ap = a;
  std::int64_t ald = lda;
  if (ta) {
    s.a.resize(static_cast<std::size_t>(m * k));
    for (std::int64_t p = 0; p < k; ++p)
      for (std::int64_t i = 0; i < m; ++i) s.a[i * k + p] = a[p * lda + i];
    ap = s.a.data();
    ald = k;
  }
  pack_b(tb, n, k, b, ldb, s.b);
  const std::int64_t panels = (n + W - 1) / W;
  for (std::int64_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::int64_t kc = std::min(kBlockK, k - p0);
    const bool acc = accumulate || p0 > 0;
    for (std::int64_t pn = 0; pn < panels; ++pn) {
      const std::int64_t j0 = pn * W;
      const std::int64_t ncols = std::min(W, n - j0);
      const T* bp = s.b.data() + pn * k * W + p0 * W;
      std::int64_t i = 0;
      for (; i + kRows <= m; i += kRows)
        Micro<T>::template run<4>(kc, ap + i * ald + p0, ald, bp, acc, c + i * ldc + j0, ldc, ncols);
      const std::int64_t rem = m - i;
      const T* arow = ap + i * ald + p0;
      T* crow = c + i * ldc + j0;
      if (rem == 3) Micro<T>::template run<3>(kc, arow, ald, bp, acc, crow, ldc, ncols);
      if (rem == 2) Micro<T>::template run<2>(kc, arow, ald, bp, acc, crow, ldc, ncols);
      if (rem == 1) Micro<T>::template run<1>(kc, arow, ald, bp, acc, crow, ldc, ncols);
    }
  }
}

}  // namespace

void sgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           bool acc, float* c, std::int64_t ldc) {
  gemm_avx2(ta, tb, m, n, k, a, lda, b, ldb, acc, c, ldc);
}

void dgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
           bool acc, double* c, std::int64_t ldc) {
  gemm_avx2(ta, tb, m, n, k, a, lda, b, ldb, acc, c, ldc);
}

RTF_AVX2 void saxpy(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

RTF_AVX2 void daxpy(std::int64_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

RTF_AVX2 float sdot(std::int64_t n, const float* x, const float* y) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
  }
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, _mm256_add_ps(s0, s1));
  float s = 0.f;
  for (float v : lanes) s += v;
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

RTF_AVX2 double ddot(std::int64_t n, const double* x, const double* y) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
  double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

#else  // !RTF_HAVE_X86: forward to the reference kernels.

void sgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           bool acc, float* c, std::int64_t ldc) {
  scalar::sgemm(ta, tb, m, n, k, a, lda, b, ldb, acc, c, ldc);
}
void dgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
           const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
           bool acc, double* c, std::int64_t ldc) {
  scalar::dgemm(ta, tb, m, n, k, a, lda, b, ldb, acc, c, ldc);
}
void saxpy(std::int64_t n, float alpha, const float* x, float* y) { scalar::saxpy(n, alpha, x, y); }
void daxpy(std::int64_t n, double alpha, const double* x, double* y) { scalar::daxpy(n, alpha, x, y); }
float sdot(std::int64_t n, const float* x, const float* y) { return scalar::sdot(n, x, y); }
double ddot(std::int64_t n, const double* x, const double* y) { return scalar::ddot(n, x, y); }

#endif

}  // namespace rtf::kernels::avx2
