#pragma once

#include <string>
#include <vector>

#include "tpc/anomaly.hpp"
#include "tpc/datagen.hpp"
#include "tpc/model.hpp"
#include "tpc/training.hpp"

namespace tpc {

struct NamedDist {
  std::string name;
  OffsetDistribution dist;
};

struct ExperimentConfig {
  std::vector<NamedDist> input_dists;
  std::vector<NamedDist> query_dists;
  std::vector<double> ablate_x{0.2, 1.0, 5.0};
  std::string grid_mode = "input";  // input | query | both
  int query_offset_max = 15;
  AnomalyConfig anomaly;
};

struct DataConfig {
  std::vector<std::string> csv_paths;  // non-empty: load instead of generating
  FieldProcessSpec field;
  EntityProcessSpec entity;
  DatasetConfig dataset;
  int test_episodes = 8;
  int test_examples_per_episode = 25;
};

// The single configuration document every CLI command consumes.
struct RunConfig {
  Task task = Task::kWeather;
  uint64_t seed = 1;
  Precision precision = Precision::kDouble;
  std::string out_dir = "runs/out";
  DataConfig data;
  ModelConfig model;  // feature/target dims derived from the task
  bool eps_s_auto = true;
  TrainConfig train;
  ExperimentConfig experiment;
};

// Parses the strict JSON schema; unknown keys raise ConfigError listing them.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical serialization (sorted keys) and its FNV-1a hash, stamped into
// every output file.
std::string run_config_to_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Task-derived dimensions and defaults applied after parsing.
void finalize_model_dims(RunConfig& cfg);

}  // namespace tpc
