#pragma once

#include <functional>
#include <string>
#include <vector>

namespace rvm {

/// One finite-difference comparison; `run` returns the worst relative error.
struct GradCase {
  std::string name;
  std::function<double()> run;
};

/// Every differentiable op, the sequence block, the descriptor head, both
/// losses and the whole pipeline on toy shapes.
std::vector<GradCase> gradient_cases();

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick invariant checks over every module; each catches its own exceptions.
std::vector<CheckResult> run_selfcheck();

}  // namespace rvm
