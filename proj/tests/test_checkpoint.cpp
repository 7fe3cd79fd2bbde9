#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>

#include "tpc/checkpoint.hpp"
#include "tpc/rng.hpp"

using namespace tpc;

namespace {

Checkpoint make_checkpoint(uint64_t seed) {
  ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.target_dim = 4;
  cfg.sizes.latent = {5, 7};
  cfg.sizes.encoder_hidden = {6, 6};
  cfg.sizes.weight_hidden = {5};
  cfg.sizes.c_mid = 3;
  cfg.sizes.query_latent = 6;
  cfg.sizes.decoder_hidden = {6};
  Rng rng(seed);
  Checkpoint ck;
  ck.model = init_model(cfg, rng);
  // Irrational-ish values exercise full double round-tripping.
  ParamSet ps;
  ck.model.collect(ps);
  Rng vals(seed * 3 + 1);
  for (int i = 0; i < ps.count(); ++i)
    for (double& v : ps.tensor(i)->v) v = vals.normal() * std::exp(vals.uniform(-9, 9));
  ck.stats.p10 = {0.1, -2.7, 3.3333333333333335, 1e-17};
  ck.stats.p90 = {1.9, 5.5, 4.666666666666667, 2e-17};
  ck.stats.degenerate = {0, 0, 0, 0};
  ck.task = Task::kWeather;
  ck.orient_bins = 0;
  ck.seed = seed;
  ck.config_hash = "deadbeef00000000";
  return ck;
}

}  // namespace

TEST_CASE("checkpoint round-trips every parameter bit for bit") {
  Checkpoint ck = make_checkpoint(19);
  const std::string path = "/tmp/tpc_test_checkpoint.json";
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);

  ParamSet a, b;
  ck.model.collect(a);
  back.model.collect(b);
  REQUIRE(a.count() == b.count());
  for (int i = 0; i < a.count(); ++i) {
    CHECK(a.name(i) == b.name(i));
    REQUIRE(a.tensor(i)->v.size() == b.tensor(i)->v.size());
    for (size_t j = 0; j < a.tensor(i)->v.size(); ++j) {
      CHECK(a.tensor(i)->v[j] == b.tensor(i)->v[j]);  // bitwise
    }
  }
  CHECK(ck.stats.p10 == back.stats.p10);
  CHECK(ck.stats.p90 == back.stats.p90);
  CHECK(back.task == Task::kWeather);
  CHECK(back.seed == 19);
  CHECK(back.config_hash == "deadbeef00000000");
  std::remove(path.c_str());
}

TEST_CASE("checkpoint predictions survive the round trip exactly") {
  Checkpoint ck = make_checkpoint(23);
  // Saner parameter scale for an actual forward pass.
  ParamSet ps;
  ck.model.collect(ps);
  Rng vals(7);
  for (int i = 0; i < ps.count(); ++i)
    for (double& v : ps.tensor(i)->v) v = vals.uniform(-0.7, 0.7);
  const std::string path = "/tmp/tpc_test_checkpoint2.json";
  save_checkpoint(ck, path);
  Checkpoint back = load_checkpoint(path);

  Rng rng(3);
  PointCloud cloud(2, 4);
  for (int i = 0; i < 20; ++i) {
    STPoint p;
    p.loc = {rng.uniform(0, 3), rng.uniform(0, 3)};
    p.t = rng.uniform(0, 3);
    p.feat = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
              rng.uniform(-1, 1)};
    cloud.add(p);
  }
  QuerySet q(3);
  for (auto& qp : q) {
    qp.loc = {rng.uniform(0, 3), rng.uniform(0, 3)};
    qp.t = rng.uniform(0, 3);
  }
  const auto v1 = predict(ck.model, cloud, q);
  const auto v2 = predict(back.model, cloud, q);
  REQUIRE(v1.size() == v2.size());
  for (size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);
  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints are rejected") {
  const std::string path = "/tmp/tpc_test_checkpoint3.json";
  {
    std::ofstream f(path);
    f << "{\"schema\": \"something-else\"}";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::exception);
  CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_missing_tpc.json"), IoError);
  std::remove(path.c_str());
}
