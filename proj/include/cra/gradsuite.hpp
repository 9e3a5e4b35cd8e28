#pragma once

#include <string>
#include <vector>

namespace cra {

struct GradSuiteRow {
  std::string name;
  double max_rel_err = 0;
  bool pass = false;
};

// Finite-difference verification at 64-bit over a named scope: "op" covers
// every primitive, "module" the composite layers (attention variants,
// aggregation, recurrence), "model" an end-to-end toy network. Rows fail
// above a 1e-4 relative error.
std::vector<GradSuiteRow> gradcheck_suite(const std::string& scope,
                                          uint64_t seed);

}  // namespace cra
