#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tpc/gradcheck.hpp"
#include "tpc/model.hpp"
#include "tpc/rng.hpp"

using namespace tpc;

namespace {

ModelConfig micro_config(int feature_dim, int target_dim) {
  ModelConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.target_dim = target_dim;
  cfg.eps_t = 0.75;
  cfg.eps_s = 1.5;
  cfg.k = 4;
  cfg.sizes.latent = {5, 6};
  cfg.sizes.encoder_hidden = {6, 6};
  cfg.sizes.weight_hidden = {5};
  cfg.sizes.c_mid = 3;
  cfg.sizes.query_latent = 6;
  cfg.sizes.decoder_hidden = {6};
  cfg.sizes.ds_phi_hidden = {6};
  cfg.sizes.ds_latent = 6;
  cfg.sizes.ds_rho_hidden = {6};
  return cfg;
}

PointCloud random_cloud(int n, int f, Rng& rng, double arena = 3.0) {
  PointCloud c(2, f);
  for (int i = 0; i < n; ++i) {
    STPoint p;
    p.loc = {rng.uniform(0, arena), rng.uniform(0, arena)};
    p.t = rng.uniform(0, 3);
    p.entity = i % 5;
    p.feat.resize(f);
    for (double& x : p.feat) x = rng.uniform(-1, 1);
    c.add(p);
  }
  return c;
}

QuerySet random_queries(int n, Rng& rng, double arena = 3.0) {
  QuerySet q(n);
  for (auto& qp : q) {
    qp.loc = {rng.uniform(0, arena), rng.uniform(0, arena)};
    qp.t = rng.uniform(0, 3);
    qp.entity = rng.uniform_int(0, 4);
  }
  return q;
}

}  // namespace

TEST_CASE("tpc_layer: isolated point stays finite via self-inclusion") {
  ModelConfig cfg = micro_config(3, 2);
  Rng rng(1);
  ModelParams model = init_model(cfg, rng);
  PointCloud cloud(2, 3);
  STPoint p;
  p.loc = {100.0, 100.0};
  p.t = 0.0;
  p.feat = {0.5, -0.5, 1.0};
  cloud.add(p);
  QuerySet q(1);
  q[0].loc = {100.0, 100.0};
  q[0].t = 0.0;
  auto geom = build_geometry(cloud, q, cfg);
  REQUIRE(geom.spatial.offsets[1] == 1);  // the point itself
  Tape tape;
  Var out = model_forward(tape, model, cloud, geom);
  for (double v : tape.value(out)) CHECK(std::isfinite(v));
}

TEST_CASE("permutation equivariance of tpc_layer outputs") {
  ModelConfig cfg = micro_config(3, 2);
  Rng rng(2);
  ModelParams model = init_model(cfg, rng);
  PointCloud cloud = random_cloud(24, 3, rng);

  QuerySet dummy;
  auto geom = build_geometry(cloud, dummy, cfg);
  Tape tape;
  Var x = tape.input(cloud.size(), 3,
                     std::vector<double>(cloud.feat_matrix().begin(),
                                         cloud.feat_matrix().end()));
  auto v = tape.value(tpc_layer(tape, x, cloud, geom, model.layers[0], cfg));
  std::vector<double> base(v.begin(), v.end());

  PointCloud reversed(2, 3);
  for (int i = cloud.size() - 1; i >= 0; --i) reversed.add(cloud.point(i));
  auto geom_r = build_geometry(reversed, dummy, cfg);
  Tape tape_r;
  Var xr = tape_r.input(reversed.size(), 3,
                        std::vector<double>(reversed.feat_matrix().begin(),
                                            reversed.feat_matrix().end()));
  auto vr =
      tape_r.value(tpc_layer(tape_r, xr, reversed, geom_r, model.layers[0], cfg));
  const int f_out = model.layers[0].f_out;
  for (int i = 0; i < cloud.size(); ++i) {
    const int j = cloud.size() - 1 - i;  // matching permutation
    for (int c = 0; c < f_out; ++c)
      CHECK(base[static_cast<size_t>(i) * f_out + c] ==
            vr[static_cast<size_t>(j) * f_out + c]);
  }
}

TEST_CASE("query outputs are per-query independent and order invariant") {
  ModelConfig cfg = micro_config(3, 2);
  Rng rng(3);
  ModelParams model = init_model(cfg, rng);
  PointCloud cloud = random_cloud(20, 3, rng);
  QuerySet q = random_queries(4, rng);
  QuerySet dup = q;
  dup.push_back(q[1]);  // duplicated query

  auto run = [&](const QuerySet& qs) {
    auto geom = build_geometry(cloud, qs, cfg);
    Tape tape;
    auto v = tape.value(model_forward(tape, model, cloud, geom));
    return std::vector<double>(v.begin(), v.end());
  };
  auto v1 = run(q);
  auto v2 = run(dup);
  for (int c = 0; c < 2; ++c) {
    CHECK(v2[4 * 2 + c] == v2[1 * 2 + c]);  // duplicate row equals original
    CHECK(v1[1 * 2 + c] == v2[1 * 2 + c]);
  }
}

TEST_CASE("queries matching sample positions include the zero-distance point") {
  ModelConfig cfg = micro_config(2, 2);
  PointCloud cloud(2, 2);
  Rng rng(4);
  for (int i = 0; i < 6; ++i) {
    STPoint p;
    p.loc = {static_cast<double>(i), 0.0};
    p.t = 0.1 * i;
    p.feat = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    cloud.add(p);
  }
  QuerySet q(1);
  q[0].loc = {2.0, 0.0};
  q[0].t = 0.2;  // exactly point 2
  auto geom = build_geometry(cloud, q, cfg);
  REQUIRE(geom.query.offsets[1] > 0);
  CHECK(geom.query.idx[0] == 2);  // distance 0 comes first
}

TEST_CASE("full micro-model gradient check at 1e-4") {
  ModelConfig cfg = micro_config(4, 3);
  Rng rng(5);
  ModelParams model = init_model(cfg, rng);
  PointCloud cloud = random_cloud(12, 4, rng);
  QuerySet q = random_queries(3, rng);
  auto geom = build_geometry(cloud, q, cfg);
  ParamSet ps;
  model.collect(ps);
  auto build = [&](Tape& tape) {
    Var out = model_forward(tape, model, cloud, geom);
    return tape.mean_reduce(tape.square(out));
  };
  auto rep = grad_check(build, ps, 1e-5);
  INFO("worst " << rep.worst.param << "[" << rep.worst.index << "] analytic "
                << rep.worst.analytic << " numeric " << rep.worst.numeric);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("translation equivariance in location for the PointConv model") {
  ModelConfig cfg = micro_config(3, 2);
  Rng rng(6);
  ModelParams model = init_model(cfg, rng);
  PointCloud cloud = random_cloud(30, 3, rng);
  QuerySet q = random_queries(5, rng);

  auto run = [&](double dx, double dy) {
    PointCloud c2(2, 3);
    for (int i = 0; i < cloud.size(); ++i) {
      STPoint p = cloud.point(i);
      p.loc[0] += dx;
      p.loc[1] += dy;
      c2.add(p);
    }
    QuerySet q2 = q;
    for (auto& qp : q2) {
      qp.loc[0] += dx;
      qp.loc[1] += dy;
    }
    auto geom = build_geometry(c2, q2, cfg);
    Tape tape;
    auto v = tape.value(model_forward(tape, model, c2, geom));
    return std::vector<double>(v.begin(), v.end());
  };
  auto v0 = run(0, 0);
  auto v1 = run(13.25, -7.5);
  for (size_t i = 0; i < v0.size(); ++i)
    CHECK(std::abs(v0[i] - v1[i]) <= 1e-12);
}

TEST_CASE("temporal-future independence under the spatial time window") {
  // A point farther than eps_t from every other point in time must not
  // influence any other point's spatial features.
  ModelConfig cfg = micro_config(2, 2);
  cfg.sizes.latent = {4};
  cfg.sizes.encoder_hidden = {5};
  Rng rng(7);
  ModelParams model = init_model(cfg, rng);

  PointCloud cloud(2, 2);
  for (int i = 0; i < 8; ++i) {
    STPoint p;
    p.loc = {0.1 * i, 0.0};
    p.t = 0.0;
    p.feat = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    cloud.add(p);
  }
  STPoint future;
  future.loc = {0.3, 0.0};
  future.t = 50.0;  // outside eps_t of everything
  future.feat = {1.0, 1.0};
  PointCloud with = cloud;
  with.add(future);
  PointCloud with2 = cloud;
  future.feat = {-3.0, 2.0};
  with2.add(future);

  QuerySet dummy;
  auto geom1 = build_geometry(with, dummy, cfg);
  auto geom2 = build_geometry(with2, dummy, cfg);
  Tape t1, t2;
  Var x1 = t1.input(with.size(), 2,
                    std::vector<double>(with.feat_matrix().begin(),
                                        with.feat_matrix().end()));
  Var x2 = t2.input(with2.size(), 2,
                    std::vector<double>(with2.feat_matrix().begin(),
                                        with2.feat_matrix().end()));
  auto o1 = t1.value(tpc_layer(t1, x1, with, geom1, model.layers[0], cfg));
  auto o2 = t2.value(tpc_layer(t2, x2, with2, geom2, model.layers[0], cfg));
  const int f_out = model.layers[0].f_out;
  for (int i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < f_out; ++c)
      CHECK(o1[static_cast<size_t>(i) * f_out + c] ==
            o2[static_cast<size_t>(i) * f_out + c]);
}

TEST_CASE("receptive field grows with stacking depth") {
  // Chain of points spaced so that each spatial window reaches only adjacent
  // points; information crosses one hop per layer.
  auto make_cfg = [&](int layers) {
    ModelConfig cfg = micro_config(1, 1);
    cfg.eps_t = 10.0;
    cfg.eps_s = 10.0;
    cfg.k = 2;  // self + one nearest neighbor in space
    cfg.sizes.latent.assign(layers, 4);
    cfg.sizes.encoder_hidden.assign(layers, 5);
    return cfg;
  };
  // Points on a line at x = 0, 1, 2, ...; with k=2 the neighborhood of point i
  // is {i, nearest other}; perturbing the far end needs >= d hops.
  PointCloud base(2, 1);
  for (int i = 0; i < 5; ++i) {
    STPoint p;
    p.loc = {static_cast<double>(i), 0.0};
    p.t = 0.0;
    p.feat = {0.1};
    base.add(p);
  }
  PointCloud poked(2, 1);
  for (int i = 0; i < 5; ++i) {
    STPoint p = base.point(i);
    if (i == 4) p.feat = {5.0};
    poked.add(p);
  }
  QuerySet q(1);
  q[0].loc = {0.0, 0.0};
  q[0].t = 0.0;

  auto influence = [&](int layers) {
    ModelConfig cfg = make_cfg(layers);
    Rng rng(8);
    ModelParams model = init_model(cfg, rng);
    auto g1 = build_geometry(base, q, cfg);
    auto g2 = build_geometry(poked, q, cfg);
    Tape t1, t2;
    auto v1 = t1.value(model_forward(t1, model, base, g1));
    auto v2 = t2.value(model_forward(t2, model, poked, g2));
    return std::abs(v1[0] - v2[0]);
  };
  // k=2 neighborhoods on the line: each point sees itself and one adjacent
  // point, so point 4's value needs several hops to reach point 0. The query
  // itself reaches points near x=0 only (k=2 window), adding one more hop.
  CHECK(influence(1) == 0.0);
  CHECK(influence(4) > 0.0);
}

TEST_CASE("entity temporal mode rejects clouds without entity ids") {
  ModelConfig cfg = micro_config(2, 2);
  cfg.temporal = TemporalKind::kEntity;
  PointCloud cloud(2, 2);
  STPoint p;
  p.loc = {0, 0};
  p.t = 0;
  p.feat = {1, 2};
  p.entity = kNoEntity;
  cloud.add(p);
  QuerySet dummy;
  CHECK_THROWS_AS(build_geometry(cloud, dummy, cfg), DataError);
}

TEST_CASE("combined mode runs a single conv per layer") {
  ModelConfig cfg = micro_config(3, 2);
  cfg.combined = true;
  cfg.combined_x = 0.5;
  Rng rng(9);
  ModelParams model = init_model(cfg, rng);
  CHECK_FALSE(model.layers[0].temporal.has_value());
  PointCloud cloud = random_cloud(15, 3, rng);
  QuerySet q = random_queries(3, rng);
  auto geom = build_geometry(cloud, q, cfg);
  Tape tape;
  auto v = tape.value(model_forward(tape, model, cloud, geom));
  CHECK(v.size() == 6);
  for (double x : v) CHECK(std::isfinite(x));
}
