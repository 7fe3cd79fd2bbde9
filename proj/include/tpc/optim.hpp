#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment accumulators, flat layout from a ParamSet.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  int64_t step = 0;

  void init(const ParamSet& ps) {
    m.assign(ps.size_scalars(), 0.0);
    v.assign(ps.size_scalars(), 0.0);
    step = 0;
  }
};

// Standard Adam update with bias correction. Throws NumericError naming the
// parameter if a gradient entry is not finite.
void adam_step(ParamSet& params, std::span<const double> grads, OptimizerState& state,
               double lr, const AdamConfig& cfg = {},
               Precision precision = Precision::kDouble);

struct LRSchedule {
  double lr_max = 1e-3;
  double lr_min = 1e-7;
  int64_t total_steps = 1;
  int cycle_count = 3;
};

// Cosine decay restarted at the start of each of cycle_count equal cycles.
double cosine_lr(int64_t step, const LRSchedule& schedule);

}  // namespace tpc
