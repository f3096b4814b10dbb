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

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "rtf/kernels.hpp"

namespace rtf::kernels {
namespace {

constexpr KernelTable kScalar{Isa::scalar,   scalar::sgemm, scalar::dgemm,
                              scalar::saxpy, scalar::daxpy, scalar::sdot,
                              scalar::ddot};
constexpr KernelTable kAvx2{Isa::avx2,   avx2::sgemm, avx2::dgemm, avx2::saxpy,
                            avx2::daxpy, avx2::sdot,  avx2::ddot};

Isa initial_isa() {
  if (const char* env = std::getenv("RTF_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_supports(Isa::avx2)) return Isa::avx2;
  }
  return cpu_supports(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(initial_isa())};
  return ptr;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool cpu_supports(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& table(Isa isa) { return isa == Isa::avx2 ? kAvx2 : kScalar; }

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void set_active(Isa isa) {
  if (!cpu_supports(isa))
    throw std::runtime_error("kernel set " + std::string(isa_name(isa)) +
                             " is not supported on this CPU");
  current().store(&table(isa));
}

}  // namespace rtf::kernels
