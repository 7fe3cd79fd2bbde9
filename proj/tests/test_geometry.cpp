#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tpc/geometry.hpp"
#include "tpc/rng.hpp"

using namespace tpc;

namespace {

STPoint pt(double x, double y, double t, int64_t entity = kNoEntity) {
  STPoint p;
  p.loc = {x, y};
  p.t = t;
  p.entity = entity;
  return p;
}

PointCloud random_cloud(int n, Rng& rng, bool entities = false, double arena = 10.0,
                        double tmax = 10.0) {
  PointCloud c(2, 0);
  for (int i = 0; i < n; ++i) {
    STPoint p;
    p.loc = {rng.uniform(0, arena), rng.uniform(0, arena)};
    p.t = rng.uniform(0, tmax);
    p.entity = entities ? rng.uniform_int(0, 12) : kNoEntity;
    c.add(p);
  }
  return c;
}

Center center_of(const PointCloud& c, int i) {
  return Center{c.loc(i), c.time(i), c.entity(i)};
}

}  // namespace

TEST_CASE("d_spatial: 3-4-5 inside the window, infinite outside") {
  STPoint a = pt(0, 0, 0);
  STPoint b = pt(3, 4, 0.5);
  CHECK(d_spatial(a, b, 1.0) == doctest::Approx(5.0));
  CHECK(d_spatial(a, b, 0.2) == kInfDist);
  CHECK(d_spatial(a, a, 1.0) == 0.0);
}

TEST_CASE("d_temporal: time gap inside the space band") {
  STPoint a = pt(1, 1, 1);
  STPoint b = pt(1, 1, 4);
  CHECK(d_temporal(a, b, 0.5) == doctest::Approx(3.0));
  STPoint far = pt(11, 1, 4);
  CHECK(d_temporal(a, far, 1.0) == kInfDist);
  CHECK(d_temporal(a, a, 1.0) == 0.0);
}

TEST_CASE("d_entity: same id measures time, different id infinite") {
  STPoint a = pt(0, 0, 3, 7);
  STPoint b = pt(5, 5, 5, 7);
  CHECK(d_entity(a, b) == doctest::Approx(2.0));
  STPoint c = pt(0, 0, 3, 8);
  CHECK(d_entity(b, c) == kInfDist);
  CHECK(d_entity(a, a) == 0.0);
  STPoint missing = pt(0, 0, 0);
  CHECK_THROWS_AS(d_entity(a, missing), DataError);
}

TEST_CASE("d_combined: scaled Euclidean composition") {
  STPoint a = pt(0, 0, 0);
  STPoint b = pt(3, 0, 4);
  CHECK(d_combined(a, b, 1.0) == doctest::Approx(5.0));
  STPoint c = pt(3, 0, 0);
  CHECK(d_combined(a, c, 9.0) == doctest::Approx(3.0));  // dt = 0
  STPoint d = pt(0, 0, 2);
  CHECK(d_combined(a, d, 0.25) == doctest::Approx(1.0));
}

TEST_CASE("distance kinds are symmetric and zero on identical points") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    STPoint a = pt(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 5),
                   rng.uniform_int(0, 3));
    STPoint b = pt(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 5),
                   rng.uniform_int(0, 3));
    CHECK(d_spatial(a, b, 1.0) == d_spatial(b, a, 1.0));
    CHECK(d_temporal(a, b, 2.0) == d_temporal(b, a, 2.0));
    CHECK(d_entity(a, b) == d_entity(b, a));
    CHECK(d_combined(a, b, 0.7) == d_combined(b, a, 0.7));
    CHECK(d_spatial(a, a, 1.0) == 0.0);
    CHECK(d_temporal(a, a, 2.0) == 0.0);
    CHECK(d_entity(a, a) == 0.0);
    CHECK(d_combined(a, a, 0.7) == 0.0);
  }
}

TEST_CASE("window monotonicity: growing the window never removes neighbors") {
  Rng rng(6);
  PointCloud cloud = random_cloud(200, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int ci = static_cast<int>(rng.uniform_int(0, cloud.size() - 1));
    DistanceSpec narrow{DistanceKind::kSpatial, 0.5, 0, 1.0, 200};
    DistanceSpec wide{DistanceKind::kSpatial, 1.5, 0, 1.0, 200};
    auto a = k_nearest(cloud, center_of(cloud, ci), narrow);
    auto b = k_nearest(cloud, center_of(cloud, ci), wide);
    for (int idx : a)
      CHECK(std::find(b.begin(), b.end(), idx) != b.end());
  }
}

TEST_CASE("d_combined is strictly increasing in x when dt > 0") {
  STPoint a = pt(0, 0, 0);
  STPoint b = pt(1, 2, 3);
  double prev = 0.0;
  for (double x : {0.1, 0.5, 1.0, 2.0, 10.0}) {
    const double d = d_combined(a, b, x);
    CHECK(d > prev);
    prev = d;
  }
}

TEST_CASE("k_nearest: fewer candidates than k, exclusion, ties") {
  PointCloud cloud(2, 0);
  cloud.add(pt(0, 0, 0));
  cloud.add(pt(1, 0, 0));
  cloud.add(pt(2, 0, 0));
  DistanceSpec spec{DistanceKind::kSpatial, 0.5, 0, 1.0, 8};
  Center c{cloud.loc(0), 0.0, kNoEntity};
  auto nb = k_nearest(cloud, c, spec);
  REQUIRE(nb.size() == 3);  // all in window, fewer than k
  CHECK(nb[0] == 0);
  CHECK(nb[1] == 1);
  CHECK(nb[2] == 2);

  // Everything out of the time window.
  Center late{cloud.loc(0), 5.0, kNoEntity};
  CHECK(k_nearest(cloud, late, spec).empty());

  // Equidistant points: smaller index first.
  PointCloud tie(2, 0);
  tie.add(pt(1, 0, 0));
  tie.add(pt(-1, 0, 0));
  tie.add(pt(0, 1, 0));
  DistanceSpec one{DistanceKind::kSpatial, 1.0, 0, 1.0, 2};
  std::vector<double> origin = {0.0, 0.0};
  auto tied = k_nearest(tie, Center{origin, 0.0, kNoEntity}, one);
  REQUIRE(tied.size() == 2);
  CHECK(tied[0] == 0);
  CHECK(tied[1] == 1);
}

TEST_CASE("index equals brute force for every kind on random clouds") {
  Rng rng(99);
  PointCloud cloud = random_cloud(1000, rng, true);
  std::vector<DistanceSpec> specs = {
      {DistanceKind::kSpatial, 0.7, 0, 1.0, 8},
      {DistanceKind::kTemporal, 0, 1.2, 1.0, 8},
      {DistanceKind::kEntityTemporal, 0, 0, 1.0, 8},
      {DistanceKind::kCombined, 0, 0, 0.6, 8},
      {DistanceKind::kQuerySpatial, 0.9, 0, 1.0, 5},
      {DistanceKind::kQueryEntity, 0, 0, 1.0, 5},
  };
  for (const auto& spec : specs) {
    NeighborIndex index(cloud, spec);
    for (int trial = 0; trial < 100; ++trial) {
      STPoint q = pt(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(0, 10),
                     rng.uniform_int(0, 12));
      Center c{std::span<const double>(q.loc.data(), 2), q.t, q.entity};
      auto brute = k_nearest(cloud, c, spec);
      auto fast = index.query(c);
      INFO("kind " << distance_kind_name(spec.kind) << " trial " << trial);
      CHECK(brute == fast);
    }
    // Cloud members as centers too (self neighborhoods).
    for (int trial = 0; trial < 50; ++trial) {
      const int ci = static_cast<int>(rng.uniform_int(0, cloud.size() - 1));
      auto brute = k_nearest(cloud, center_of(cloud, ci), spec);
      auto fast = index.query(center_of(cloud, ci));
      CHECK(brute == fast);
    }
  }
}

TEST_CASE("single-point cloud: included iff in window") {
  PointCloud cloud(2, 0);
  cloud.add(pt(1, 1, 0));
  DistanceSpec spec{DistanceKind::kSpatial, 0.5, 0, 1.0, 4};
  NeighborIndex index(cloud, spec);
  std::vector<double> loc = {1.0, 1.0};
  CHECK(index.query(Center{loc, 0.2, kNoEntity}) == std::vector<int>{0});
  CHECK(index.query(Center{loc, 2.0, kNoEntity}).empty());
}

TEST_CASE("degenerate cloud of identical points: first k by index") {
  PointCloud cloud(2, 0);
  for (int i = 0; i < 10; ++i) cloud.add(pt(2, 2, 1));
  DistanceSpec spec{DistanceKind::kSpatial, 1.0, 0, 1.0, 4};
  NeighborIndex index(cloud, spec);
  std::vector<double> loc = {2.0, 2.0};
  const auto got = index.query(Center{loc, 1.0, kNoEntity});
  CHECK(got == std::vector<int>{0, 1, 2, 3});
  CHECK(k_nearest(cloud, Center{loc, 1.0, kNoEntity}, spec) == got);
}

TEST_CASE("gather_neighborhoods: parallel and serial agree exactly") {
  Rng rng(123);
  PointCloud cloud = random_cloud(400, rng, true);
  QuerySet queries;
  for (int i = 0; i < 60; ++i) {
    QueryPoint q;
    q.loc = {rng.uniform(0, 10), rng.uniform(0, 10)};
    q.t = rng.uniform(0, 10);
    q.entity = rng.uniform_int(0, 12);
    queries.push_back(q);
  }
  for (DistanceKind kind : {DistanceKind::kQuerySpatial, DistanceKind::kQueryEntity,
                            DistanceKind::kCombined}) {
    DistanceSpec spec{kind, 0.8, 1.0, 0.5, 8};
    NeighborIndex index(cloud, spec);
    const CenterList centers{&cloud, &queries};
    auto serial = gather_neighborhoods(cloud, centers, spec, &index, false);
    auto parallel = gather_neighborhoods(cloud, centers, spec, &index, true);
    auto brute = gather_neighborhoods(cloud, centers, spec, nullptr, true);
    CHECK(serial.idx == parallel.idx);
    CHECK(serial.offsets == parallel.offsets);
    CHECK(serial.delta == parallel.delta);
    CHECK(serial.idx == brute.idx);
    CHECK(serial.offsets == brute.offsets);
    CHECK(serial.delta == brute.delta);
  }
}

TEST_CASE("positional differences per kind") {
  PointCloud cloud(2, 0);
  cloud.add(pt(2, 3, 5));
  DistanceSpec spatial{DistanceKind::kSpatial, 1.0, 0, 1.0, 4};
  DistanceSpec temporal{DistanceKind::kTemporal, 0, 1.0, 1.0, 4};
  DistanceSpec combined{DistanceKind::kCombined, 0, 0, 1.0, 4};
  std::vector<double> c0 = {1.0, 1.0};
  Center c{c0, 3.0, kNoEntity};
  double out2[2], out1[1], out3[3];
  positional_difference(spatial, cloud, 0, c, {out2, 2});
  CHECK(out2[0] == 1.0);
  CHECK(out2[1] == 2.0);
  positional_difference(temporal, cloud, 0, c, {out1, 1});
  CHECK(out1[0] == 2.0);
  positional_difference(combined, cloud, 0, c, {out3, 3});
  CHECK(out3[0] == 1.0);
  CHECK(out3[1] == 2.0);
  CHECK(out3[2] == 2.0);

  Center self{cloud.loc(0), cloud.time(0), cloud.entity(0)};
  positional_difference(combined, cloud, 0, self, {out3, 3});
  CHECK(out3[0] == 0.0);
  CHECK(out3[1] == 0.0);
  CHECK(out3[2] == 0.0);
}

TEST_CASE("DistanceSpec validation") {
  DistanceSpec bad{DistanceKind::kSpatial, 0.0, 0, 1.0, 8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  DistanceSpec badk{DistanceKind::kCombined, 0, 0, 1.0, 0};
  CHECK_THROWS_AS(badk.validate(), ConfigError);
  DistanceSpec badx{DistanceKind::kCombined, 0, 0, -1.0, 3};
  CHECK_THROWS_AS(badx.validate(), ConfigError);
}
