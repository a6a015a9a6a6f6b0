#include "vlltr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vlltr/error.hpp"

namespace vlltr {
namespace {

double eval(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(Var::constant(t));
  const double v = f(vars).item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite loss at probe point");
  return v;
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& opts) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(Var::parameter(t));
  Var out = f(vars);
  if (!std::isfinite(out.item())) throw NumericError("gradcheck: non-finite loss");
  out.backward();

  GradcheckReport rep;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double x0 = inputs[i][k];
      probe[i][k] = x0 + opts.step;
      const double fp = eval(f, probe);
      probe[i][k] = x0 - opts.step;
      const double fm = eval(f, probe);
      probe[i][k] = x0;

      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double analytic = vars[i].has_grad() ? vars[i].grad()[k] : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_input = i;
        rep.worst_index = k;
      }
      ++rep.coordinates;
    }
  }
  rep.passed = rep.max_rel_error <= opts.tolerance;
  return rep;
}

}  // namespace vlltr
