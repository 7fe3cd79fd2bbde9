#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tpc/experiments.hpp"
#include "tpc/training.hpp"

using namespace tpc;

namespace {

Dataset small_field_dataset(uint64_t seed, int episodes = 4, int per_episode = 6) {
  FieldProcessSpec spec;
  spec.stations = 14;
  spec.length = 18.0;
  DatasetConfig cfg;
  cfg.episodes = episodes;
  cfg.examples_per_episode = per_episode;
  cfg.history = {OffsetKind::kUniform, {}, -5.0, -1.0, 5.0, 5};
  cfg.query = {OffsetKind::kFixed, {0}, 0, 0, 5.0, 0};
  return make_field_dataset(spec, cfg, seed);
}

NormalizationStats simple_stats() {
  NormalizationStats st;
  st.p10 = {0.0, 10.0, -1.0, 0.0};
  st.p90 = {1.0, 20.0, 1.0, 4.0};
  st.degenerate = {0, 0, 0, 0};
  return st;
}

}  // namespace

TEST_CASE("normalize maps percentile endpoints to 0 and 1") {
  auto st = simple_stats();
  CHECK(st.norm(0, 0.0) == 0.0);
  CHECK(st.norm(0, 1.0) == 1.0);
  CHECK(st.norm(1, 15.0) == doctest::Approx(0.5));
  CHECK(st.denorm(1, st.norm(1, 17.3)) == doctest::Approx(17.3).epsilon(1e-14));
  // Outside the band maps outside [0, 1]; no clipping.
  CHECK(st.norm(1, 25.0) > 1.0);
  CHECK(st.norm(1, 5.0) < 0.0);
}

TEST_CASE("normalization round trip below 1e-12") {
  auto st = simple_stats();
  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int ch = static_cast<int>(rng.uniform_int(0, 3));
    const double v = rng.uniform(-50, 50);
    worst = std::max(worst, std::abs(st.denorm(ch, st.norm(ch, v)) - v));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("degenerate channels fall back to the identity map") {
  Dataset ds;
  ds.task = Task::kWeather;
  TrainingExample ex;
  ex.P = PointCloud(2, 4);
  STPoint p;
  p.loc = {0, 0};
  p.t = 0;
  p.feat = {1.0, 2.0, 3.0, 4.0};  // constant -> degenerate percentiles
  ex.P.add(p);
  ex.Q.resize(1);
  ex.Q[0].loc = {0, 0};
  ex.target = {1.0, 2.0, 3.0, 4.0};
  ex.target_cols = 4;
  ex.target_class = {-1};
  ex.alive = {1};
  ds.examples.push_back(ex);
  ds.feature_dim = 4;
  ds.target_cols = 4;
  auto st = compute_stats(ds, {0});
  for (int c = 0; c < 4; ++c) {
    CHECK(st.degenerate[c] == 1);
    CHECK(st.norm(c, 7.5) == 7.5);
  }
}

TEST_CASE("stats come from the training indices only") {
  Dataset ds = small_field_dataset(3);
  std::vector<int> train_idx, val_idx;
  split_by_episode(ds, 0.4, 9, train_idx, val_idx);
  auto st_train = compute_stats(ds, train_idx);
  auto st_val = compute_stats(ds, val_idx);
  bool differs = false;
  for (int c = 0; c < 4; ++c)
    if (st_train.p10[c] != st_val.p10[c] || st_train.p90[c] != st_val.p90[c])
      differs = true;
  CHECK(differs);  // different splits, different percentiles
}

TEST_CASE("weather loss: zero at equality, quarter at half-unit error") {
  PreparedExample ex;
  ex.Q.resize(1);
  ex.target_cols = 1;
  ex.target_norm = {0.5};
  Tape tape;
  Var pred_eq = tape.input(1, 1, {0.5});
  CHECK(tape.scalar_value(weather_loss(tape, pred_eq, ex)) == 0.0);
  Var pred_off = tape.input(1, 1, {1.0});
  CHECK(tape.scalar_value(weather_loss(tape, pred_off, ex)) ==
        doctest::Approx(0.25));
}

TEST_CASE("weather loss is a mean over queries") {
  PreparedExample one;
  one.Q.resize(1);
  one.target_cols = 2;
  one.target_norm = {0.0, 0.0};
  PreparedExample two;
  two.Q.resize(2);
  two.target_cols = 2;
  two.target_norm = {0.0, 0.0, 0.0, 0.0};
  Tape tape;
  Var p1 = tape.input(1, 2, {0.3, -0.4});
  Var p2 = tape.input(2, 2, {0.3, -0.4, 0.3, -0.4});
  CHECK(tape.scalar_value(weather_loss(tape, p1, one)) ==
        doctest::Approx(tape.scalar_value(weather_loss(tape, p2, two))));
}

TEST_CASE("entity loss decomposition and masking") {
  const int bins = 8;
  PreparedExample ex;
  ex.Q.resize(2);
  ex.target_cols = 4;
  ex.alive = {1, 0};
  ex.target_norm = {0.2, 0.4, 0.6, 0.8, 0.0, 0.0, 0.0, 0.0};
  ex.target_class = {3, -1};

  // Perfect prediction for the alive unit, strongly correct alive logits.
  std::vector<double> pred(2 * (4 + bins + 1), 0.0);
  pred[0] = 0.2;
  pred[1] = 0.4;
  pred[2] = 0.6;
  pred[3] = 0.8;
  pred[4 + 3] = 60.0;               // orientation logit on the true bin
  pred[4 + bins] = 60.0;            // alive logit (alive unit)
  pred[(4 + bins + 1) + 4 + bins] = -60.0;  // alive logit (dead unit)

  Tape tape;
  Var p = tape.input(2, 4 + bins + 1, std::vector<double>(pred));
  const double loss = tape.scalar_value(entity_loss(tape, p, ex, bins));
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-9));

  SUBCASE("dead-unit property targets are ignored entirely") {
    PreparedExample ex2 = ex;
    ex2.target_norm[4] = 123.0;  // garbage in the dead unit's targets
    ex2.target_norm[7] = -55.0;
    Tape t2;
    Var p2 = t2.input(2, 4 + bins + 1, std::vector<double>(pred));
    CHECK(t2.scalar_value(entity_loss(t2, p2, ex2, bins)) == loss);
  }

  SUBCASE("wrong orientation contributes only cross entropy") {
    std::vector<double> pred2 = pred;
    pred2[4 + 3] = 0.0;  // uniform logits over 8 bins
    Tape t2;
    Var p2 = t2.input(2, 4 + bins + 1, std::vector<double>(pred2));
    const double l2 = t2.scalar_value(entity_loss(t2, p2, ex, bins));
    CHECK(l2 == doctest::Approx(std::log(8.0)).epsilon(1e-9));
  }

  SUBCASE("position error of (0.3, 0.4) contributes 0.125") {
    std::vector<double> pred2 = pred;
    pred2[0] = 0.2 + 0.3;
    pred2[1] = 0.4 + 0.4;
    Tape t2;
    Var p2 = t2.input(2, 4 + bins + 1, std::vector<double>(pred2));
    const double l2 = t2.scalar_value(entity_loss(t2, p2, ex, bins));
    CHECK(l2 == doctest::Approx(0.125).epsilon(1e-9));
  }

  SUBCASE("all units dead leaves only the alive term") {
    PreparedExample dead = ex;
    dead.alive = {0, 0};
    dead.target_class = {-1, -1};
    std::vector<double> pred2 = pred;
    pred2[4 + bins] = -60.0;
    Tape t2;
    Var p2 = t2.input(2, 4 + bins + 1, std::vector<double>(pred2));
    CHECK(t2.scalar_value(entity_loss(t2, p2, dead, bins)) ==
          doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("weather loss is invariant to affine unit rescaling") {
  Dataset ds = small_field_dataset(5);
  // Affine transform of every channel: v -> a*v + b with a > 0.
  Dataset scaled = ds;
  const double a[4] = {2.0, 0.5, 3.0, 1.5};
  const double b[4] = {-1.0, 4.0, 0.0, 2.5};
  for (auto& ex : scaled.examples) {
    auto& fm = ex.P.mutable_feat_matrix();
    for (int p = 0; p < ex.P.size(); ++p)
      for (int c = 0; c < 4; ++c)
        fm[static_cast<size_t>(p) * 4 + c] =
            a[c] * fm[static_cast<size_t>(p) * 4 + c] + b[c];
    for (int q = 0; q < ex.n_queries(); ++q)
      for (int c = 0; c < 4; ++c)
        ex.target[static_cast<size_t>(q) * 4 + c] =
            a[c] * ex.target[static_cast<size_t>(q) * 4 + c] + b[c];
  }
  std::vector<int> idx(ds.examples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  auto st1 = compute_stats(ds, idx);
  auto st2 = compute_stats(scaled, idx);
  // Normalized targets agree bitwise-close; losses computed on them agree.
  for (size_t i = 0; i < ds.examples.size(); ++i) {
    auto p1 = prepare_example(ds.examples[i], Task::kWeather, st1, 0);
    auto p2 = prepare_example(scaled.examples[i], Task::kWeather, st2, 0);
    for (size_t v = 0; v < p1.target_norm.size(); ++v)
      CHECK(p1.target_norm[v] == doctest::Approx(p2.target_norm[v]).epsilon(1e-9));
  }
}

TEST_CASE("training: deterministic, improving, best-checkpointing") {
  Dataset ds = small_field_dataset(11, 6, 8);
  RunConfig rc;
  rc.task = Task::kWeather;
  rc.seed = 3;
  rc.model.sizes.latent = {6, 6};
  rc.model.sizes.encoder_hidden = {8, 8};
  rc.model.sizes.weight_hidden = {6};
  rc.model.sizes.c_mid = 4;
  rc.model.sizes.query_latent = 8;
  rc.model.sizes.decoder_hidden = {8};
  rc.model.eps_t = 1.0;
  rc.model.k = 6;
  finalize_model_dims(rc);
  rc.train.epochs = 2;
  rc.train.batch = 8;
  rc.train.seed = 3;
  rc.train.val_fraction = 0.34;

  auto out1 = run_training(rc, ds);
  auto out2 = run_training(rc, ds);
  REQUIRE(out1.result.history.size() == out2.result.history.size());
  for (size_t i = 0; i < out1.result.history.size(); ++i) {
    CHECK(out1.result.history[i].val_loss == out2.result.history[i].val_loss);
    CHECK(out1.result.history[i].train_loss == out2.result.history[i].train_loss);
  }
  CHECK(out1.result.best_val ==
        doctest::Approx(out2.result.best_val).epsilon(0));

  // Validation improves over random init on this easy smoothing task.
  CHECK(out1.result.history.back().val_loss <=
        out1.result.history.front().val_loss);

  // The returned model is the best-validation snapshot.
  Metrics m = evaluate(out1.result.model, out1.result.stats, ds,
                       out1.result.val_indices);
  CHECK(std::isfinite(m.total_mean));
}

TEST_CASE("training on one repeated example drives the loss down") {
  Dataset ds = small_field_dataset(21, 2, 1);
  // Duplicate one example across two synthetic episodes so the split works.
  Dataset tiny;
  tiny.task = ds.task;
  tiny.feature_dim = ds.feature_dim;
  tiny.target_cols = ds.target_cols;
  tiny.loc_dim = ds.loc_dim;
  tiny.attr_names = ds.attr_names;
  for (int i = 0; i < 12; ++i) {
    TrainingExample ex = ds.examples[0];
    ex.episode_id = i % 3;
    tiny.examples.push_back(ex);
  }
  RunConfig rc;
  rc.task = Task::kWeather;
  rc.model.sizes.latent = {6};
  rc.model.sizes.encoder_hidden = {8};
  rc.model.sizes.weight_hidden = {6};
  rc.model.sizes.c_mid = 4;
  rc.model.sizes.query_latent = 8;
  rc.model.sizes.decoder_hidden = {8};
  rc.model.eps_t = 1.0;
  finalize_model_dims(rc);
  rc.train.epochs = 12;
  rc.train.batch = 4;
  rc.train.cycles = 3;
  rc.train.val_fraction = 0.3;
  rc.train.lr_max = 3e-3;
  auto out = run_training(rc, tiny);
  REQUIRE(out.result.history.size() >= 3);
  CHECK(out.result.history.back().train_loss <
        out.result.history.front().train_loss);
}

TEST_CASE("evaluate: constant error gives zero CI; duplication shrinks CI") {
  // Metrics math is checked through the public evaluate() on a stub model is
  // heavy; instead check the CI formula through duplicated datasets.
  Dataset ds = small_field_dataset(31, 3, 4);
  RunConfig rc;
  rc.task = Task::kWeather;
  rc.model.sizes.latent = {5};
  rc.model.sizes.encoder_hidden = {6};
  rc.model.sizes.weight_hidden = {5};
  rc.model.sizes.c_mid = 3;
  rc.model.sizes.query_latent = 6;
  rc.model.sizes.decoder_hidden = {6};
  finalize_model_dims(rc);
  rc.train.epochs = 1;
  rc.train.batch = 8;
  auto out = run_training(rc, ds);

  Dataset doubled = ds;
  for (const auto& ex : ds.examples) doubled.examples.push_back(ex);
  Metrics m1 = evaluate(out.result.model, out.result.stats, ds);
  Metrics m2 = evaluate(out.result.model, out.result.stats, doubled);
  CHECK(m1.total_mean == doctest::Approx(m2.total_mean).epsilon(1e-12));
  CHECK(m2.total_ci ==
        doctest::Approx(m1.total_ci / std::sqrt(2.0)).epsilon(0.02));
  CHECK(m2.n_queries == 2 * m1.n_queries);
}

TEST_CASE("non-finite training data aborts with diagnostics") {
  Dataset ds = small_field_dataset(41, 3, 3);
  // Poison one example's features after assembly.
  auto& fm = ds.examples[2].P.mutable_feat_matrix();
  fm[0] = std::numeric_limits<double>::quiet_NaN();
  RunConfig rc;
  rc.task = Task::kWeather;
  rc.model.sizes.latent = {4};
  rc.model.sizes.encoder_hidden = {5};
  rc.model.sizes.weight_hidden = {4};
  rc.model.sizes.c_mid = 3;
  rc.model.sizes.query_latent = 5;
  rc.model.sizes.decoder_hidden = {5};
  finalize_model_dims(rc);
  rc.train.epochs = 1;
  rc.train.batch = 4;
  CHECK_THROWS_WITH_AS(run_training(rc, ds), doctest::Contains("step"), Error);
}
