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

// Acceptance criteria as runnable checks. Each criterion returns a verdict
// plus the measured values behind it, so the same code backs the
// `rtformer check` subcommand and the per-criterion acceptance tests.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rtf::acceptance {

inline constexpr int kNumCriteria = 9;

struct Outcome {
  int criterion = 0;
  std::string title;
  bool pass = false;
  /// Measured values, one per line.
  std::vector<std::string> details;
};

struct Options {
  /// Progress for long criteria; may be null.
  std::ostream* progress = nullptr;
  int bench_trials = 30;
  /// Training criterion: metrics CSV of the first run (empty: none).
  std::string metrics_path;
};

/// Throws ConfigError for ids outside [1, kNumCriteria].
Outcome run_criterion(int id, const Options& opt = {});
std::string title(int id);

/// Criteria that are pure invariants of a correct build: fast, and
/// independent of timing and of long training runs.
std::vector<int> invariant_suite();

/// "criterion N: PASS|FAIL  title" followed by indented details.
void print(std::ostream& os, const Outcome& o);

}  // namespace rtf::acceptance
