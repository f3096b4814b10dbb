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

// Runs the acceptance criteria; one PASS/FAIL line per criterion.

#include <iostream>

#include "CLI11.hpp"
#include "rtf/acceptance.hpp"

int main(int argc, char** argv) {
  namespace acc = rtf::acceptance;
  CLI::App app{"acceptance criteria"};
  std::vector<int> ids;
  acc::Options opt;
  bool quiet = false;
  app.add_option("--criterion", ids, "criteria to run (default: all)")
      ->check(CLI::Range(1, acc::kNumCriteria));
  app.add_option("--trials", opt.bench_trials, "benchmark trials (at least 30)")
      ->capture_default_str();
  app.add_option("--metrics", opt.metrics_path, "training metrics CSV of the first run");
  app.add_flag("--quiet", quiet, "no training progress");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  if (ids.empty())
    for (int i = 1; i <= acc::kNumCriteria; ++i) ids.push_back(i);
  if (!quiet) opt.progress = &std::cerr;

  std::vector<acc::Outcome> outcomes;
  for (int id : ids) {
    try {
      outcomes.push_back(acc::run_criterion(id, opt));
    } catch (const std::exception& e) {
      outcomes.push_back({id, acc::title(id), false, {std::string("error: ") + e.what()}});
    }
    acc::print(std::cout, outcomes.back());
    std::cout.flush();
  }
  bool ok = true;
  if (outcomes.size() > 1) std::cout << "\nsummary\n";
  for (const auto& o : outcomes) {
    if (outcomes.size() > 1)
      std::cout << "  criterion " << o.criterion << ": " << (o.pass ? "PASS" : "FAIL") << "  "
                << o.title << '\n';
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
