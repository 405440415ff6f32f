#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "samtl/gradcheck.hpp"

namespace samtl {

struct SuiteCase {
  std::string name;
  GradCheckReport report;
};

struct SuiteResult {
  std::vector<SuiteCase> cases;
  double max_rel_err = 0.0;
  bool pass = false;
  double seconds = 0.0;
};

// 64-bit central-difference checks: every differentiable op over
// `seeds_per_op` random draws at tol 1e-4, then the full model
// (defaults reduced to max_seq_len 30, batch 2) on 25 sampled
// parameters at tol 1e-3.
SuiteResult run_gradcheck_suite(int seeds_per_op = 10,
                                std::ostream* log = nullptr);

}  // namespace samtl
