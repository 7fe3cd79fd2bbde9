#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

struct GradCheckEntry {
  std::string param;
  int index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  GradCheckEntry worst;
  int checked = 0;
};

// Compares analytic gradients from one taped backward pass against central
// finite differences of the rebuilt forward pass. `build` must be a
// deterministic function of the current parameter values. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const std::function<Var(Tape&)>& build, ParamSet& params,
                           double h = 1e-5);

}  // namespace tpc
