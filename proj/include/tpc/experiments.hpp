#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tpc/anomaly.hpp"
#include "tpc/checkpoint.hpp"
#include "tpc/config.hpp"

namespace tpc {

// Builds the training dataset described by the config (generator or CSV).
Dataset build_dataset(const RunConfig& cfg, uint64_t seed);
// Disjoint test dataset (fresh episode seeds derived from the config seed).
Dataset build_test_dataset(const RunConfig& cfg, uint64_t seed);
// Test episodes for per-sample protocols (anomaly scoring).
std::vector<Episode> build_test_episodes(const RunConfig& cfg, uint64_t seed);

// Radius at which the average station reaches >= k spatial neighbors,
// measured once on the dataset's input clouds.
double auto_eps_s(const Dataset& ds, int k);

// Resolves auto eps_s and derived dims, seeds the model, runs training.
struct TrainOutcome {
  TrainResult result;
  Metrics val_metrics;
  ModelConfig resolved_model;
};
TrainOutcome run_training(RunConfig cfg, const Dataset& ds,
                          const EvalCallback& on_eval = nullptr);

// Command implementations; each writes self-describing outputs under out_dir
// and returns its headline numbers. `out_dir` empty: nothing is written.
struct GenOutput {
  std::string csv_path;
  int episodes = 0;
  int samples = 0;
};
GenOutput cmd_gen(const RunConfig& cfg, const std::string& out_dir);

struct TrainOutput {
  std::string checkpoint_path;
  double best_val = 0.0;
  Metrics val_metrics;
};
TrainOutput cmd_train(const RunConfig& cfg, const std::string& out_dir);

Metrics cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                 const std::string& out_dir);

struct GradCheckOutput {
  double max_rel_err = 0.0;
  int checked = 0;
  std::string worst_param;
};
GradCheckOutput cmd_gradcheck(const RunConfig& cfg, const std::string& out_dir);

struct DistGridOutput {
  std::vector<std::string> names;                 // distributions
  std::vector<std::vector<double>> loss;          // train dist x eval dist
  // query mode: per train dist, loss at offsets 1..query_offset_max
  std::vector<std::vector<double>> loss_by_offset;
};
DistGridOutput cmd_dist_grid(const RunConfig& cfg, const std::string& out_dir);

struct AblateOutput {
  std::vector<std::string> variants;  // "separated", "combined_x=..."
  std::vector<double> loss;
};
AblateOutput cmd_ablate_combined(const RunConfig& cfg, const std::string& out_dir);

struct AnomalyOutput {
  RocCurve roc;
  int scored = 0;
  int positives = 0;
};
AnomalyOutput cmd_anomaly(const std::string& checkpoint_path, const RunConfig& cfg,
                          const std::string& out_dir);

}  // namespace tpc
