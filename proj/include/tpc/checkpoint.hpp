#pragma once

#include <string>

#include "tpc/model.hpp"
#include "tpc/training.hpp"

namespace tpc {

// Self-describing model bundle: config, every parameter tensor, and the
// normalization statistics. JSON round-trips double values bit-exactly.
struct Checkpoint {
  ModelParams model;
  NormalizationStats stats;
  Task task = Task::kWeather;
  int orient_bins = 0;
  uint64_t seed = 0;
  std::string config_hash;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// JSON (de)serialization of the model configuration, shared with RunConfig.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace tpc
