#include "tpc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tpc {

namespace {

double percentile(std::vector<double>& sorted_values, double p) {
  const size_t n = sorted_values.size();
  if (n == 0) throw DataError("percentile: no values");
  const double h = p * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(h);
  const size_t hi = std::min(lo + 1, n - 1);
  const double w = h - static_cast<double>(lo);
  return sorted_values[lo] * (1.0 - w) + sorted_values[hi] * w;
}

int entity_health_col(const Dataset& ds) {
  return ds.feature_dim - ds.orient_bins - 2;
}

}  // namespace

NormalizationStats compute_stats(const Dataset& ds, const std::vector<int>& indices) {
  const int channels = 4;
  std::vector<std::vector<double>> vals(channels);
  for (int i : indices) {
    const TrainingExample& ex = ds.examples[i];
    if (ds.task == Task::kWeather) {
      for (int p = 0; p < ex.P.size(); ++p) {
        auto f = ex.P.feat(p);
        for (int c = 0; c < channels; ++c) vals[c].push_back(f[c]);
      }
      for (int q = 0; q < ex.n_queries(); ++q)
        for (int c = 0; c < channels; ++c)
          vals[c].push_back(ex.target[static_cast<size_t>(q) * ex.target_cols + c]);
    } else {
      const int hc = entity_health_col(ds);
      for (int p = 0; p < ex.P.size(); ++p) {
        auto l = ex.P.loc(p);
        auto f = ex.P.feat(p);
        vals[0].push_back(l[0]);
        vals[1].push_back(l[1]);
        vals[2].push_back(f[hc]);
        vals[3].push_back(f[hc + 1]);
      }
    }
  }
  NormalizationStats st;
  st.p10.resize(channels);
  st.p90.resize(channels);
  st.degenerate.resize(channels, 0);
  for (int c = 0; c < channels; ++c) {
    if (vals[c].empty()) throw DataError("compute_stats: empty channel");
    std::sort(vals[c].begin(), vals[c].end());
    st.p10[c] = percentile(vals[c], 0.10);
    st.p90[c] = percentile(vals[c], 0.90);
    if (!(st.p90[c] > st.p10[c])) st.degenerate[c] = 1;
  }
  return st;
}

PreparedExample prepare_example(const TrainingExample& ex, Task task,
                                const NormalizationStats& stats, int orient_bins) {
  PreparedExample out;
  out.Q = ex.Q;
  out.target_cols = ex.target_cols;
  out.target_raw = ex.target;
  out.target_class = ex.target_class;
  out.alive = ex.alive;
  out.episode_id = ex.episode_id;

  out.P = ex.P;
  auto& fm = out.P.mutable_feat_matrix();
  const int fd = out.P.feat_dim();
  if (task == Task::kWeather) {
    for (int p = 0; p < out.P.size(); ++p)
      for (int c = 0; c < fd; ++c)
        fm[static_cast<size_t>(p) * fd + c] =
            stats.norm(c, fm[static_cast<size_t>(p) * fd + c]);
    out.target_norm.resize(ex.target.size());
    for (int q = 0; q < ex.n_queries(); ++q)
      for (int c = 0; c < ex.target_cols; ++c) {
        const size_t at = static_cast<size_t>(q) * ex.target_cols + c;
        out.target_norm[at] = stats.norm(c, ex.target[at]);
      }
  } else {
    const int hc = fd - orient_bins - 2;
    for (int p = 0; p < out.P.size(); ++p) {
      fm[static_cast<size_t>(p) * fd + hc] =
          stats.norm(2, fm[static_cast<size_t>(p) * fd + hc]);
      fm[static_cast<size_t>(p) * fd + hc + 1] =
          stats.norm(3, fm[static_cast<size_t>(p) * fd + hc + 1]);
    }
    out.target_norm.resize(ex.target.size());
    for (int q = 0; q < ex.n_queries(); ++q) {
      const size_t base = static_cast<size_t>(q) * 4;
      out.target_norm[base + 0] = stats.norm(0, ex.target[base + 0]);
      out.target_norm[base + 1] = stats.norm(1, ex.target[base + 1]);
      out.target_norm[base + 2] = stats.norm(2, ex.target[base + 2]);
      out.target_norm[base + 3] = stats.norm(3, ex.target[base + 3]);
    }
  }
  return out;
}

Var weather_loss(Tape& tape, Var pred, const PreparedExample& ex) {
  const int nq = static_cast<int>(ex.Q.size());
  if (tape.rows(pred) != nq || tape.cols(pred) != ex.target_cols)
    throw ShapeError("weather_loss", {{tape.rows(pred), tape.cols(pred)},
                                      {nq, ex.target_cols}});
  Var target = tape.input(nq, ex.target_cols,
                          std::vector<double>(ex.target_norm.begin(),
                                              ex.target_norm.end()));
  Var sq = tape.square(tape.sub(pred, target));
  // Sum over attributes of the per-query mean: total / query count.
  return tape.scale(tape.sum_reduce(sq), 1.0 / nq);
}

Var entity_loss(Tape& tape, Var pred, const PreparedExample& ex, int orient_bins) {
  const int nq = static_cast<int>(ex.Q.size());
  const int cols = 4 + orient_bins + 1;
  if (tape.rows(pred) != nq || tape.cols(pred) != cols)
    throw ShapeError("entity_loss", {{tape.rows(pred), tape.cols(pred)}, {nq, cols}});

  // Alive head over every queried unit-timestep.
  Var alive_logit = tape.slice_cols(pred, 4 + orient_bins, cols);
  std::vector<double> alive_t(nq);
  for (int q = 0; q < nq; ++q) alive_t[q] = ex.alive[q] ? 1.0 : 0.0;
  Var total = tape.mean_reduce(tape.sigmoid_xent(alive_logit, alive_t));

  std::vector<int> alive_idx;
  for (int q = 0; q < nq; ++q)
    if (ex.alive[q]) alive_idx.push_back(q);
  if (alive_idx.empty()) return total;

  const int na = static_cast<int>(alive_idx.size());
  Var pa = tape.gather_rows(pred, alive_idx);
  std::vector<double> tgt(static_cast<size_t>(na) * 4);
  std::vector<int> cls(na);
  for (int i = 0; i < na; ++i) {
    const int q = alive_idx[i];
    for (int c = 0; c < 4; ++c)
      tgt[static_cast<size_t>(i) * 4 + c] =
          ex.target_norm[static_cast<size_t>(q) * 4 + c];
    cls[i] = ex.target_class[q];
  }
  Var t = tape.input(na, 4, std::move(tgt));

  // Numeric properties: per-property MSE (mean over that property's
  // coordinates and the alive queries), summed across properties.
  Var pos = tape.mean_reduce(tape.square(
      tape.sub(tape.slice_cols(pa, 0, 2), tape.slice_cols(t, 0, 2))));
  Var health = tape.mean_reduce(tape.square(
      tape.sub(tape.slice_cols(pa, 2, 3), tape.slice_cols(t, 2, 3))));
  Var shield = tape.mean_reduce(tape.square(
      tape.sub(tape.slice_cols(pa, 3, 4), tape.slice_cols(t, 3, 4))));
  Var orient = tape.mean_reduce(
      tape.softmax_xent(tape.slice_cols(pa, 4, 4 + orient_bins), cls));

  total = tape.add(total, pos);
  total = tape.add(total, health);
  total = tape.add(total, shield);
  total = tape.add(total, orient);
  return total;
}

Var example_loss(Tape& tape, Var pred, const PreparedExample& ex, Task task,
                 int orient_bins) {
  return task == Task::kWeather ? weather_loss(tape, pred, ex)
                                : entity_loss(tape, pred, ex, orient_bins);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
  if (batch < 1) throw ConfigError("TrainConfig: batch must be >= 1");
  if (!(lr_max >= lr_min) || lr_min <= 0.0)
    throw ConfigError("TrainConfig: require lr_max >= lr_min > 0");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw ConfigError("TrainConfig: val_fraction must be in (0, 1)");
}

void split_by_episode(const Dataset& ds, double val_fraction, uint64_t seed,
                      std::vector<int>& train_idx, std::vector<int>& val_idx) {
  std::vector<int> episodes;
  for (const auto& ex : ds.examples)
    if (std::find(episodes.begin(), episodes.end(), ex.episode_id) == episodes.end())
      episodes.push_back(ex.episode_id);
  if (episodes.size() < 2)
    throw DataError("split_by_episode: need at least two episodes");
  Rng rng(seed ^ 0x9129b6f1d8c0aULL);
  rng.shuffle(episodes);
  const int n_val = std::max(1, static_cast<int>(std::llround(
                                    val_fraction * episodes.size())));
  std::vector<int> val_eps(episodes.begin(), episodes.begin() + n_val);
  train_idx.clear();
  val_idx.clear();
  for (int i = 0; i < static_cast<int>(ds.examples.size()); ++i) {
    const int ep = ds.examples[i].episode_id;
    if (std::find(val_eps.begin(), val_eps.end(), ep) != val_eps.end())
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  if (train_idx.empty() || val_idx.empty())
    throw DataError("split_by_episode: degenerate split");
}

namespace {

struct ExampleRun {
  double loss = 0.0;
  std::string error;
};

// Forward + backward for one example on a private tape; gradients land in a
// private flat buffer so the batch can run in parallel.
ExampleRun run_example(ModelParams& model, const PreparedExample& ex, Task task,
                       int orient_bins, const ParamSet& ps, std::span<double> sink,
                       Precision precision) {
  ExampleRun r;
  try {
    const CloudGeometry geom = build_geometry(ex.P, ex.Q, model.config, false);
    Tape tape(precision);
    Var pred = model_forward(tape, model, ex.P, geom);
    Var loss = example_loss(tape, pred, ex, task, orient_bins);
    r.loss = tape.scalar_value(loss);
    if (!sink.empty()) tape.backward_flat(loss, ps, sink);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

double forward_loss_only(ModelParams& model, const PreparedExample& ex, Task task,
                         int orient_bins, Precision precision) {
  const CloudGeometry geom = build_geometry(ex.P, ex.Q, model.config, false);
  Tape tape(precision);
  Var pred = model_forward(tape, model, ex.P, geom);
  return tape.scalar_value(example_loss(tape, pred, ex, task, orient_bins));
}

}  // namespace

TrainResult train(ModelParams init, const Dataset& ds, const TrainConfig& cfg,
                  const EvalCallback& on_eval) {
  cfg.validate();
  TrainResult result;
  result.model = std::move(init);
  split_by_episode(ds, cfg.val_fraction, cfg.seed, result.train_indices,
                   result.val_indices);
  result.stats = compute_stats(ds, result.train_indices);

  std::vector<PreparedExample> train_ex, val_ex;
  train_ex.reserve(result.train_indices.size());
  for (int i : result.train_indices)
    train_ex.push_back(
        prepare_example(ds.examples[i], ds.task, result.stats, ds.orient_bins));
  const int n_val = std::min<int>(cfg.max_val_examples,
                                  static_cast<int>(result.val_indices.size()));
  for (int v = 0; v < n_val; ++v)
    val_ex.push_back(prepare_example(ds.examples[result.val_indices[v]], ds.task,
                                     result.stats, ds.orient_bins));

  ParamSet ps;
  result.model.collect(ps);
  const size_t np = ps.size_scalars();
  OptimizerState opt;
  opt.init(ps);

  const int n_train = static_cast<int>(train_ex.size());
  const int steps_per_epoch = (n_train + cfg.batch - 1) / cfg.batch;
  const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  const LRSchedule schedule{cfg.lr_max, cfg.lr_min, total_steps, cfg.cycles};
  result.total_steps = total_steps;

  const int eval_interval =
      std::max(1, steps_per_epoch / std::max(1, cfg.evals_per_epoch));

  Rng shuffle_rng(cfg.seed ^ 0x517cc1b727220a95ULL);
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<double>> sinks;
  std::vector<double> grad(np);
  std::vector<double> best_params(np);
  result.best_val = kInfDist;

  auto validation_loss = [&]() {
    std::vector<double> losses(val_ex.size());
    std::vector<std::string> errors(val_ex.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int i = 0; i < static_cast<int>(val_ex.size()); ++i) {
      try {
        losses[i] = forward_loss_only(result.model, val_ex[i], ds.task,
                                      ds.orient_bins, cfg.precision);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw Error("validation failed: " + e);
    double s = 0.0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
  };

  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (int b0 = 0; b0 < n_train; b0 += cfg.batch) {
      const int bsz = std::min(cfg.batch, n_train - b0);
      const double lr = cosine_lr(step, schedule);
      if (static_cast<int>(sinks.size()) < bsz) sinks.resize(bsz);
      for (int i = 0; i < bsz; ++i) sinks[i].assign(np, 0.0);
      std::vector<ExampleRun> runs(bsz);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
      for (int i = 0; i < bsz; ++i) {
        runs[i] = run_example(result.model, train_ex[order[b0 + i]], ds.task,
                              ds.orient_bins, ps, sinks[i], cfg.precision);
      }

      double batch_loss = 0.0;
      for (int i = 0; i < bsz; ++i) {
        if (!runs[i].error.empty())
          throw Error("train: step " + std::to_string(step) + ", lr " +
                      std::to_string(lr) + ", batch example " +
                      std::to_string(order[b0 + i]) + ": " + runs[i].error);
        batch_loss += runs[i].loss;
      }
      batch_loss /= bsz;

      // Ordered reduction keeps results identical for any thread count.
      std::fill(grad.begin(), grad.end(), 0.0);
      for (int i = 0; i < bsz; ++i)
        for (size_t j = 0; j < np; ++j) grad[j] += sinks[i][j];
      const double inv = 1.0 / bsz;
      for (size_t j = 0; j < np; ++j) grad[j] *= inv;

      adam_step(ps, grad, opt, lr, {}, cfg.precision);
      ++step;

      if (step % eval_interval == 0 || step == total_steps) {
        EvalPoint pt;
        pt.step = step;
        pt.lr = lr;
        pt.train_loss = batch_loss;
        pt.val_loss = validation_loss();
        result.history.push_back(pt);
        if (on_eval) on_eval(pt);
        if (pt.val_loss < result.best_val) {
          result.best_val = pt.val_loss;
          ps.values_to_flat(best_params);
        }
      }
    }
  }

  if (result.best_val < kInfDist) ps.values_from_flat(best_params);
  return result;
}

Metrics evaluate(ModelParams& model, const NormalizationStats& stats,
                 const Dataset& ds, const std::vector<int>& indices,
                 Precision precision) {
  std::vector<int> idx = indices;
  if (idx.empty()) {
    idx.resize(ds.examples.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  if (idx.empty()) throw DataError("evaluate: empty dataset");

  struct PerExample {
    // weather: per-query [attr0..attr3 raw squared error, normalized total]
    // entity: rows (group, value) with group ids below
    std::vector<std::array<double, 6>> weather;
    std::vector<std::pair<int, double>> entity;
    std::string error;
  };
  enum { kPos = 0, kHealth = 1, kShield = 2, kOrient = 3, kAlive = 4 };

  std::vector<PerExample> per(idx.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
    try {
      const PreparedExample ex =
          prepare_example(ds.examples[idx[i]], ds.task, stats, ds.orient_bins);
      const CloudGeometry geom = build_geometry(ex.P, ex.Q, model.config, false);
      Tape tape(precision);
      Var pred_var = model_forward(tape, model, ex.P, geom);
      auto pred = tape.value(pred_var);
      const int nq = static_cast<int>(ex.Q.size());
      if (ds.task == Task::kWeather) {
        const int tc = ex.target_cols;
        for (int q = 0; q < nq; ++q) {
          std::array<double, 6> row{};
          double total = 0.0;
          for (int c = 0; c < tc; ++c) {
            const double pn = pred[static_cast<size_t>(q) * tc + c];
            const double tn = ex.target_norm[static_cast<size_t>(q) * tc + c];
            const double praw = stats.denorm(c, pn);
            const double traw = ex.target_raw[static_cast<size_t>(q) * tc + c];
            row[c] = (praw - traw) * (praw - traw);
            total += (pn - tn) * (pn - tn);
          }
          row[4] = total;
          per[i].weather.push_back(row);
        }
      } else {
        const int bins = ds.orient_bins;
        const int cols = 4 + bins + 1;
        for (int q = 0; q < nq; ++q) {
          const double* row = pred.data() + static_cast<size_t>(q) * cols;
          const double z = row[4 + bins];
          const double y = ex.alive[q] ? 1.0 : 0.0;
          const double bce =
              std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
          per[i].entity.emplace_back(kAlive, bce);
          if (!ex.alive[q]) continue;
          const double* tn = ex.target_norm.data() + static_cast<size_t>(q) * 4;
          const double dp0 = row[0] - tn[0], dp1 = row[1] - tn[1];
          per[i].entity.emplace_back(kPos, 0.5 * (dp0 * dp0 + dp1 * dp1));
          per[i].entity.emplace_back(kHealth, (row[2] - tn[2]) * (row[2] - tn[2]));
          per[i].entity.emplace_back(kShield, (row[3] - tn[3]) * (row[3] - tn[3]));
          double mx = row[4];
          for (int b = 1; b < bins; ++b) mx = std::max(mx, row[4 + b]);
          double denom = 0.0;
          for (int b = 0; b < bins; ++b) denom += std::exp(row[4 + b] - mx);
          const double lse = mx + std::log(denom);
          per[i].entity.emplace_back(kOrient, lse - row[4 + ex.target_class[q]]);
        }
      }
    } catch (const std::exception& e) {
      per[i].error = e.what();
    }
  }
  for (const auto& p : per)
    if (!p.error.empty()) throw Error("evaluate failed: " + p.error);

  auto mean_ci = [](const std::vector<double>& xs) {
    AttrMetric m;
    const double n = static_cast<double>(xs.size());
    if (xs.empty()) return m;
    double s = 0.0;
    for (double x : xs) s += x;
    m.mean = s / n;
    double var = 0.0;
    for (double x : xs) var += (x - m.mean) * (x - m.mean);
    if (xs.size() > 1) var /= (n - 1.0);
    m.ci = 1.96 * std::sqrt(var / n);
    return m;
  };

  Metrics out;
  if (ds.task == Task::kWeather) {
    std::vector<std::vector<double>> cols(5);
    for (const auto& p : per)
      for (const auto& row : p.weather)
        for (int c = 0; c < 5; ++c) cols[c].push_back(row[c]);
    out.n_queries = static_cast<int64_t>(cols[0].size());
    for (int c = 0; c < 4; ++c) {
      AttrMetric m = mean_ci(cols[c]);
      m.name = c < static_cast<int>(ds.attr_names.size()) ? ds.attr_names[c]
                                                          : "attr" + std::to_string(c);
      out.attrs.push_back(m);
    }
    AttrMetric tot = mean_ci(cols[4]);
    out.total_mean = tot.mean;
    out.total_ci = tot.ci;
  } else {
    std::vector<std::vector<double>> groups(5);
    for (const auto& p : per)
      for (const auto& [g, v] : p.entity) groups[g].push_back(v);
    const char* names[5] = {"position", "health", "shield", "orientation", "alive"};
    out.n_queries = static_cast<int64_t>(groups[4].size());
    double total = 0.0, ci2 = 0.0;
    for (int g = 0; g < 5; ++g) {
      AttrMetric m = mean_ci(groups[g]);
      m.name = names[g];
      out.attrs.push_back(m);
      total += m.mean;
      ci2 += m.ci * m.ci;
    }
    out.total_mean = total;
    out.total_ci = std::sqrt(ci2);
  }
  return out;
}

}  // namespace tpc
