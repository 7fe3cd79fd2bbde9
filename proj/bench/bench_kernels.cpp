// Serial reference paths vs the OpenMP/index-accelerated kernels.
#include <benchmark/benchmark.h>

#include "tpc/model.hpp"
#include "tpc/pointconv.hpp"
#include "tpc/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace tpc;

PointCloud make_cloud(int n, int feat_dim, uint64_t seed) {
  Rng rng(seed);
  PointCloud c(2, feat_dim);
  for (int i = 0; i < n; ++i) {
    STPoint p;
    p.loc = {rng.uniform(0, 10), rng.uniform(0, 10)};
    p.t = rng.uniform(0, 10);
    p.entity = rng.uniform_int(0, 40);
    p.feat.resize(feat_dim);
    for (double& f : p.feat) f = rng.uniform(-1, 1);
    c.add(p);
  }
  return c;
}

void bm_knn_brute(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const PointCloud cloud = make_cloud(n, 0, 1);
  const DistanceSpec spec{DistanceKind::kSpatial, 0.75, 0, 1.0, 8};
  const CenterList centers{&cloud, nullptr};
  for (auto _ : state) {
    auto nbh = gather_neighborhoods(cloud, centers, spec, nullptr, false);
    benchmark::DoNotOptimize(nbh.idx.data());
  }
}

void bm_knn_index(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const PointCloud cloud = make_cloud(n, 0, 1);
  const DistanceSpec spec{DistanceKind::kSpatial, 0.75, 0, 1.0, 8};
  const NeighborIndex index(cloud, spec);
  const CenterList centers{&cloud, nullptr};
  for (auto _ : state) {
    auto nbh = gather_neighborhoods(cloud, centers, spec, &index, false);
    benchmark::DoNotOptimize(nbh.idx.data());
  }
}

void bm_knn_index_omp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const PointCloud cloud = make_cloud(n, 0, 1);
  const DistanceSpec spec{DistanceKind::kSpatial, 0.75, 0, 1.0, 8};
  const NeighborIndex index(cloud, spec);
  const CenterList centers{&cloud, nullptr};
  for (auto _ : state) {
    auto nbh = gather_neighborhoods(cloud, centers, spec, &index, true);
    benchmark::DoNotOptimize(nbh.idx.data());
  }
}

struct ConvFixture {
  PointCloud cloud;
  Neighborhoods nbh;
  PointConvParams eff;
  DirectPointConvParams direct;

  explicit ConvFixture(int n) : cloud(make_cloud(n, 8, 3)) {
    const DistanceSpec spec{DistanceKind::kSpatial, 0.75, 0, 1.0, 8};
    nbh = gather_neighborhoods(cloud, {&cloud, nullptr}, spec, nullptr, true);
    Rng rng(17);
    eff = PointConvParams::create(2, {16, 16}, 16, 8, 16, rng);
    direct = compose_direct(eff);
  }
};

void bm_pointconv_direct(benchmark::State& state) {
  ConvFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Tape tape;
    Var f = tape.input(fx.cloud.size(), fx.cloud.feat_dim(),
                       std::vector<double>(fx.cloud.feat_matrix()));
    Var out = pointconv_direct(tape, f, fx.nbh, fx.direct);
    benchmark::DoNotOptimize(tape.value(out).data());
  }
}

void bm_pointconv_efficient(benchmark::State& state) {
  ConvFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Tape tape;
    Var f = tape.input(fx.cloud.size(), fx.cloud.feat_dim(),
                       std::vector<double>(fx.cloud.feat_matrix()));
    Var out = pointconv_efficient(tape, f, fx.nbh, fx.eff);
    benchmark::DoNotOptimize(tape.value(out).data());
  }
}

void bm_batch_grad(benchmark::State& state, bool parallel) {
  const int batch = 16;
  ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.target_dim = 4;
  cfg.sizes.latent = {8, 8};
  cfg.sizes.encoder_hidden = {16, 16};
  cfg.sizes.weight_hidden = {8};
  cfg.sizes.c_mid = 8;
  cfg.sizes.query_latent = 16;
  cfg.sizes.decoder_hidden = {16};
  Rng rng(5);
  ModelParams model = init_model(cfg, rng);
  ParamSet ps;
  model.collect(ps);

  std::vector<PointCloud> clouds;
  std::vector<QuerySet> queries;
  std::vector<CloudGeometry> geoms;
  std::vector<std::vector<double>> targets;
  for (int b = 0; b < batch; ++b) {
    clouds.push_back(make_cloud(120, 4, 100 + b));
    QuerySet q;
    Rng qr(200 + b);
    for (int i = 0; i < 6; ++i) {
      QueryPoint qp;
      qp.loc = {qr.uniform(0, 10), qr.uniform(0, 10)};
      qp.t = qr.uniform(0, 10);
      q.push_back(qp);
    }
    queries.push_back(q);
    geoms.push_back(build_geometry(clouds[b], queries[b], cfg, false));
    std::vector<double> t(6 * 4);
    for (double& v : t) v = qr.uniform(-1, 1);
    targets.push_back(t);
  }

  std::vector<std::vector<double>> sinks(batch,
                                         std::vector<double>(ps.size_scalars()));
  for (auto _ : state) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel)
#endif
    for (int b = 0; b < batch; ++b) {
      std::fill(sinks[b].begin(), sinks[b].end(), 0.0);
      Tape tape;
      Var pred = model_forward(tape, model, clouds[b], geoms[b]);
      Var target = tape.input(6, 4, std::vector<double>(targets[b]));
      Var loss = tape.mean_reduce(tape.square(tape.sub(pred, target)));
      tape.backward_flat(loss, ps, sinks[b]);
    }
    benchmark::DoNotOptimize(sinks.data());
  }
}

void bm_batch_grad_serial(benchmark::State& state) { bm_batch_grad(state, false); }
void bm_batch_grad_parallel(benchmark::State& state) { bm_batch_grad(state, true); }

}  // namespace

BENCHMARK(bm_knn_brute)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_knn_index)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_knn_index_omp)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_pointconv_direct)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_pointconv_efficient)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_batch_grad_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_batch_grad_parallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
