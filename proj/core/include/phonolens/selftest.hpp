#pragma once

#include <functional>
#include <string>
#include <vector>

namespace phonolens {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  bool skipped = false;  // a required resource is unavailable
};

// Invariant suite over the synthetic tiny models: needs no network and no
// reference weights.
std::vector<CheckResult> run_selftest(const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace phonolens
