#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vlltr/gradcheck.hpp"
#include "vlltr/rng.hpp"

namespace vlltr {

// A gradient-check target: draws a random small instance and returns the
// scalar function plus the point to check it at.
struct GradcheckInstance {
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

struct GradcheckCase {
  std::string name;
  std::function<GradcheckInstance(Rng&)> make;
};

// Every op and loss with a hand-written backward. With `with_fault`, a
// deliberately wrong op ("faulty_scale") is appended as a negative control.
std::vector<GradcheckCase> gradcheck_cases(bool with_fault = false);

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  bool passed() const { return failures == 0; }
};

std::vector<SuiteResult> run_gradcheck_suite(const std::vector<GradcheckCase>& cases,
                                             std::size_t instances, std::uint64_t seed,
                                             const GradcheckOptions& opts = {});

// One line per case: name, instance count, worst relative error, PASS/FAIL.
std::string format_suite(const std::vector<SuiteResult>& results);

}  // namespace vlltr
