#include "tpc/optim.hpp"

#include <cmath>
#include <numbers>

#include "tpc/error.hpp"

namespace tpc {

void adam_step(ParamSet& params, std::span<const double> grads, OptimizerState& state,
               double lr, const AdamConfig& cfg, Precision precision) {
  if (lr <= 0.0) throw Error("adam_step: lr must be positive");
  if (grads.size() != params.size_scalars())
    throw Error("adam_step: gradient size mismatch");
  if (state.m.size() != grads.size()) throw Error("adam_step: state not initialized");

  for (int p = 0; p < params.count(); ++p) {
    const size_t off = params.offset(p);
    const size_t sz = static_cast<size_t>(params.tensor(p)->size());
    for (size_t i = off; i < off + sz; ++i) {
      if (!std::isfinite(grads[i]))
        throw NumericError("adam_step: non-finite gradient in parameter " +
                           params.name(p));
    }
  }

  state.step += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (int p = 0; p < params.count(); ++p) {
    Tensor* t = params.tensor(p);
    const size_t off = params.offset(p);
    for (int i = 0; i < t->size(); ++i) {
      const double g = grads[off + i];
      double& m = state.m[off + i];
      double& v = state.v[off + i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / b1t;
      const double vhat = v / b2t;
      double w = t->v[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (precision == Precision::kSingle) w = static_cast<double>(static_cast<float>(w));
      t->v[i] = w;
    }
  }
}

double cosine_lr(int64_t step, const LRSchedule& s) {
  if (s.cycle_count < 1) throw Error("cosine_lr: cycle_count must be >= 1");
  if (s.lr_max < s.lr_min || s.lr_min <= 0.0)
    throw Error("cosine_lr: require lr_max >= lr_min > 0");
  if (step < 0 || step >= s.total_steps)
    throw Error("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                std::to_string(s.total_steps) + ")");
  const double pos = static_cast<double>(step) * s.cycle_count /
                     static_cast<double>(s.total_steps);
  int cycle = static_cast<int>(pos);
  if (cycle >= s.cycle_count) cycle = s.cycle_count - 1;
  const double phase = pos - cycle;  // in [0, 1)
  return s.lr_min +
         0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace tpc
