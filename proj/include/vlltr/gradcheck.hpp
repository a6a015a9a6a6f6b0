#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vlltr/autograd.hpp"

namespace vlltr {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so gradients that are zero up
  // to rounding are compared absolutely.
  double floor = 1e-3;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

using ScalarFn = std::function<Var(const std::vector<Var>&)>;

// Compares the analytic gradient of f at `inputs` against central
// differences, coordinate by coordinate. Throws NumericError if f returns a
// non-finite value at any probe point.
GradcheckReport gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& opts = {});

}  // namespace vlltr
