#pragma once

// Finite-difference verification suites, run in 64-bit. "all" covers the
// stand-alone kernels, each parameterized module, and every parameter of a
// full forward pass (batch 2, two layers, hidden 16, 4-token questions,
// 6-token answers) through the multi-task loss.

#include <string>
#include <vector>

namespace match2 {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradSuiteReport {
  std::vector<GradCheckEntry> checks;
  double worst = 0.0;
  double seconds = 0.0;
  bool passed = false;
  double tolerance = 0.0;
};

// module: all | encoder | pattern | gate | head | core | model
GradSuiteReport run_gradcheck_suite(const std::string& module, double h = 1e-3,
                                    double tolerance = 1e-3);

}  // namespace match2
