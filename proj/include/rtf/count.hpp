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

// Closed-form parameter and multiply-add counts derived from a ModelConfig.
// FLOPs are reported as 2 x multiply-adds, where multiply-adds cover
// convolutions, matmuls and one per normalized element (BN, softmax, double
// normalization). The formulas are independent of the layer code; tests hold
// them against the registry and the instrumented op counters.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtf/model.hpp"

namespace rtf::model {

struct CountRow {
  std::string module;
  std::int64_t params = 0;
  std::int64_t gemm_macs = 0;
  std::int64_t norm_macs = 0;
  std::int64_t matmul_calls = 0;

  std::int64_t macs() const { return gemm_macs + norm_macs; }
  std::int64_t flops() const { return 2 * macs(); }
  CountRow& operator+=(const CountRow& o);
};

struct CountReport {
  std::string config;
  std::int64_t height = 0;
  std::int64_t width = 0;
  /// stem, stage1..stage5, dappm, head.
  std::vector<CountRow> rows;

  CountRow total() const;
  const CountRow& row(const std::string& module) const;
  /// module,params,flops with a trailing total row.
  std::string to_csv() const;
};

/// Per-image counts at an H x W input.
CountReport count_flops(const ModelConfig& cfg, std::int64_t height, std::int64_t width);
/// Parameter counts (flop columns are those of the smallest legal input).
CountReport count_params(const ModelConfig& cfg);

// Building blocks of the above, exposed for per-layer tests. Spatial sizes
// are output sizes.
CountRow count_basic_block(std::int64_t cin, std::int64_t cout, std::int64_t stride,
                           std::int64_t oh, std::int64_t ow);
CountRow count_ffn(std::int64_t d, FfnKind kind, std::int64_t h, std::int64_t w);
CountRow count_exchange(std::int64_t d_h, std::int64_t d_l, std::int64_t ratio, bool down,
                        std::int64_t hh, std::int64_t hw);
CountRow count_attention(std::int64_t d, const blocks::AttentionLayer::Spec& spec,
                         std::int64_t h, std::int64_t w);
CountRow count_block(const blocks::BlockConfig& cfg, std::int64_t hh, std::int64_t hw,
                     std::int64_t lh, std::int64_t lw);
CountRow count_dappm(std::int64_t cin, std::int64_t width, std::int64_t cout, std::int64_t h,
                     std::int64_t w);
CountRow count_head(std::int64_t d, std::int64_t classes, std::int64_t h, std::int64_t w);

}  // namespace rtf::model
