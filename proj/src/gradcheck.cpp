#include "tpc/gradcheck.hpp"

#include <cmath>

#include "tpc/error.hpp"

namespace tpc {

GradCheckReport grad_check(const std::function<Var(Tape&)>& build, ParamSet& params,
                           double h) {
  params.zero_grads();
  {
    Tape tape(Precision::kDouble);
    const Var loss = build(tape);
    if (!std::isfinite(tape.scalar_value(loss)))
      throw NumericError("grad_check: loss is not finite");
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape tape(Precision::kDouble);
    return tape.scalar_value(build(tape));
  };

  GradCheckReport report;
  for (int p = 0; p < params.count(); ++p) {
    Tensor* t = params.tensor(p);
    for (int i = 0; i < t->size(); ++i) {
      const double saved = t->v[i];
      t->v[i] = saved + h;
      const double fp = eval();
      t->v[i] = saved - h;
      const double fm = eval();
      t->v[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = t->g.empty() ? 0.0 : t->g[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = {params.name(p), i, analytic, numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace tpc
