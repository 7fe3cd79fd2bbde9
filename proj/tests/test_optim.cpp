#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tpc/optim.hpp"

using namespace tpc;

namespace {

// Scalar Adam reference, evaluated step by step.
struct ScalarAdam {
  double m = 0, v = 0;
  int64_t t = 0;
  double step(double w, double g, double lr, const AdamConfig& c = {}) {
    ++t;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mhat = m / (1 - std::pow(c.beta1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(c.beta2, static_cast<double>(t)));
    return w - lr * mhat / (std::sqrt(vhat) + c.eps);
  }
};

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor w = Tensor::row({1.5, -2.5});
  ParamSet ps;
  ps.add("w", &w);
  OptimizerState st;
  st.init(ps);
  std::vector<double> g = {0.0, 0.0};
  adam_step(ps, g, st, 0.1);
  CHECK(w.v[0] == 1.5);
  CHECK(w.v[1] == -2.5);
  CHECK(st.step == 1);
}

TEST_CASE("adam: first bias-corrected step moves by about lr") {
  Tensor w = Tensor::row({0.0});
  ParamSet ps;
  ps.add("w", &w);
  OptimizerState st;
  st.init(ps);
  std::vector<double> g = {1.0};
  adam_step(ps, g, st, 0.1);
  CHECK(w.v[0] == doctest::Approx(-0.1).epsilon(1e-6));

  ScalarAdam ref;
  CHECK(w.v[0] == doctest::Approx(ref.step(0.0, 1.0, 0.1)).epsilon(1e-14));
}

TEST_CASE("adam: successive identical steps track the scalar reference") {
  Tensor w = Tensor::row({0.0});
  ParamSet ps;
  ps.add("w", &w);
  OptimizerState st;
  st.init(ps);
  ScalarAdam ref;
  double wref = 0.0;
  double prev_delta = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 5; ++i) {
    const double before = w.v[0];
    std::vector<double> g = {1.0};
    adam_step(ps, g, st, 0.1);
    wref = ref.step(wref, 1.0, 0.1);
    CHECK(w.v[0] == doctest::Approx(wref).epsilon(1e-14));
    const double delta = std::abs(w.v[0] - before);
    CHECK(delta <= prev_delta + 1e-15);
    prev_delta = delta;
  }
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  Tensor a = Tensor::row({1.0});
  Tensor b = Tensor::row({1.0});
  ParamSet ps;
  ps.add("alpha", &a);
  ps.add("beta", &b);
  OptimizerState st;
  st.init(ps);
  std::vector<double> g = {0.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_WITH_AS(adam_step(ps, g, st, 0.1), doctest::Contains("beta"),
                       NumericError);
}

TEST_CASE("cosine_lr: cycle starts hit lr_max") {
  LRSchedule s{1e-3, 1e-7, 300, 3};
  CHECK(cosine_lr(0, s) == doctest::Approx(1e-3));
  CHECK(cosine_lr(100, s) == doctest::Approx(1e-3));
  CHECK(cosine_lr(200, s) == doctest::Approx(1e-3));
}

TEST_CASE("cosine_lr: cosine midpoint is the mean of the range") {
  LRSchedule s{1e-3, 1e-7, 200, 1};
  CHECK(cosine_lr(100, s) == doctest::Approx(5.0005e-4).epsilon(1e-9));
}

TEST_CASE("cosine_lr: bounded and periodic") {
  LRSchedule s{3e-3, 1e-6, 600, 3};
  for (int64_t step = 0; step < 600; ++step) {
    const double lr = cosine_lr(step, s);
    CHECK(lr <= s.lr_max);
    CHECK(lr >= s.lr_min);
    if (step + 200 < 600)
      CHECK(cosine_lr(step, s) == doctest::Approx(cosine_lr(step + 200, s)));
  }
}

TEST_CASE("cosine_lr: out-of-range step is rejected") {
  LRSchedule s{1e-3, 1e-7, 100, 2};
  CHECK_THROWS_AS(cosine_lr(-1, s), Error);
  CHECK_THROWS_AS(cosine_lr(100, s), Error);
}
