#pragma once

#include <cstdint>
#include <vector>

#include "vlltr/autograd.hpp"

namespace vlltr {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 5e-2;
};

// A parameter handle plus whether decoupled weight decay applies to it.
struct ParamRef {
  Var var;
  bool decay = true;
};

struct OptimState {
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  AdamWConfig config;
};

OptimState make_optim_state(const std::vector<ParamRef>& params, AdamWConfig config = {});

// One AdamW update using each parameter's accumulated gradient (a missing
// gradient counts as zero). Weight decay is applied to the parameter
// directly: p <- p * (1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps).
void adamw_step(std::vector<ParamRef>& params, OptimState& state, double lr);

// Same update with explicit gradients, one per parameter.
void adamw_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                const std::vector<bool>& decay, OptimState& state, double lr);

struct LrSchedule {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  std::uint64_t total_steps = 1;
};

// Half-cosine decay from base_lr at step 0 to min_lr at total_steps.
double cosine_lr(const LrSchedule& sched, std::uint64_t step);

}  // namespace vlltr
