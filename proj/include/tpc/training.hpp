#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tpc/datagen.hpp"
#include "tpc/model.hpp"
#include "tpc/optim.hpp"

namespace tpc {

// Per-channel p10/p90 scaling computed on the training split only. Channels
// are the four field attributes (weather) or (x, y, health, shield) (entity).
struct NormalizationStats {
  std::vector<double> p10, p90;
  std::vector<uint8_t> degenerate;  // p90 <= p10: mapped through identity

  int channels() const { return static_cast<int>(p10.size()); }
  double norm(int ch, double v) const {
    return degenerate[ch] ? v : (v - p10[ch]) / (p90[ch] - p10[ch]);
  }
  double denorm(int ch, double v) const {
    return degenerate[ch] ? v : v * (p90[ch] - p10[ch]) + p10[ch];
  }
};

// Computes stats from the examples selected by `indices` (the training split).
NormalizationStats compute_stats(const Dataset& ds,
                                 const std::vector<int>& indices);

// An example with normalized features and targets, ready for the model.
struct PreparedExample {
  PointCloud P;
  QuerySet Q;
  std::vector<double> target_norm;  // |Q| x target_cols
  std::vector<double> target_raw;
  int target_cols = 0;
  std::vector<int> target_class;
  std::vector<uint8_t> alive;
  int episode_id = 0;
};

PreparedExample prepare_example(const TrainingExample& ex, Task task,
                                const NormalizationStats& stats, int orient_bins);

// Taped losses (training path).
Var weather_loss(Tape& tape, Var pred, const PreparedExample& ex);
Var entity_loss(Tape& tape, Var pred, const PreparedExample& ex, int orient_bins);
Var example_loss(Tape& tape, Var pred, const PreparedExample& ex, Task task,
                 int orient_bins);

struct TrainConfig {
  int epochs = 6;
  int batch = 32;
  double lr_max = 1e-3;
  double lr_min = 1e-7;
  int cycles = 3;
  double val_fraction = 0.15;
  uint64_t seed = 1;
  Precision precision = Precision::kDouble;
  int evals_per_epoch = 10;
  int max_val_examples = 64;  // fixed validation subset for smooth curves

  void validate() const;
};

struct EvalPoint {
  int64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct AttrMetric {
  std::string name;
  double mean = 0.0;
  double ci = 0.0;  // 1.96 * sd / sqrt(n)
};

struct Metrics {
  std::vector<AttrMetric> attrs;
  double total_mean = 0.0;
  double total_ci = 0.0;
  int64_t n_queries = 0;
};

struct TrainResult {
  ModelParams model;  // best-validation parameters
  NormalizationStats stats;
  std::vector<EvalPoint> history;
  double best_val = 0.0;
  int64_t total_steps = 0;
  std::vector<int> train_indices, val_indices;  // episode-disjoint split
};

using EvalCallback = std::function<void(const EvalPoint&)>;

// Deterministic given (model seed path, config.seed): fixed episode-level
// split, fixed shuffle order, ordered gradient reduction across the batch.
TrainResult train(ModelParams init, const Dataset& ds, const TrainConfig& cfg,
                  const EvalCallback& on_eval = nullptr);

// Mean per-query metrics with 95% confidence intervals over `indices`
// (defaults to all examples).
Metrics evaluate(ModelParams& model, const NormalizationStats& stats,
                 const Dataset& ds, const std::vector<int>& indices = {},
                 Precision precision = Precision::kDouble);

// Episode-disjoint split helper (validation fraction of episodes).
void split_by_episode(const Dataset& ds, double val_fraction, uint64_t seed,
                      std::vector<int>& train_idx, std::vector<int>& val_idx);

}  // namespace tpc
