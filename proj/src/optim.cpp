#include "vlltr/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "vlltr/error.hpp"

namespace vlltr {

OptimState make_optim_state(const std::vector<ParamRef>& params, AdamWConfig config) {
  OptimState st;
  st.config = config;
  for (const auto& p : params) {
    st.first_moment.emplace_back(p.var.shape(), 0.0);
    st.second_moment.emplace_back(p.var.shape(), 0.0);
  }
  return st;
}

void adamw_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                const std::vector<bool>& decay, OptimState& state, double lr) {
  if (params.size() != grads.size() || params.size() != decay.size() ||
      params.size() != state.first_moment.size())
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  if (lr < 0.0) throw ValidationError("adamw_step: negative learning rate");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->shape() != grads[i].shape() ||
        params[i]->shape() != state.first_moment[i].shape())
      throw ShapeError("adamw_step: parameter " + std::to_string(i) + " has shape " +
                       shape_str(params[i]->shape()) + " but gradient " +
                       shape_str(grads[i].shape()));

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const double shrink = decay[i] ? 1.0 - lr * c.weight_decay : 1.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i][k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] = p[k] * shrink - lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

void adamw_step(std::vector<ParamRef>& params, OptimState& state, double lr) {
  std::vector<Tensor*> values;
  std::vector<Tensor> grads;
  std::vector<bool> decay;
  for (auto& p : params) {
    values.push_back(&p.var.mutable_value());
    grads.push_back(p.var.has_grad() ? p.var.grad() : Tensor(p.var.shape(), 0.0));
    decay.push_back(p.decay);
  }
  adamw_step(std::move(values), grads, decay, state, lr);
}

double cosine_lr(const LrSchedule& sched, std::uint64_t step) {
  if (sched.total_steps == 0) throw ValidationError("cosine_lr: total_steps must be positive");
  if (step > sched.total_steps)
    throw ValidationError("cosine_lr: step " + std::to_string(step) + " beyond total " +
                          std::to_string(sched.total_steps));
  const double frac = static_cast<double>(step) / static_cast<double>(sched.total_steps);
  return sched.min_lr +
         0.5 * (sched.base_lr - sched.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace vlltr
