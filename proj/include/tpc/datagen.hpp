#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tpc/geometry.hpp"
#include "tpc/rng.hpp"

namespace tpc {

enum class Task { kWeather, kEntity };

// One recorded observation inside an episode.
struct Sample {
  int64_t entity = kNoEntity;  // station id / unit id; kNoEntity if absent
  double t = 0.0;
  std::vector<double> loc;
  bool quality_ok = true;
  std::vector<double> feat;
};

struct Episode {
  int id = 0;
  int loc_dim = 2;
  int feat_dim = 0;
  double t_begin = 0.0;
  double t_end = 0.0;
  std::vector<Sample> samples;  // sorted by (t, entity)
};

// ---------------------------------------------------------------------------
// Field process: moving Gaussian sources over a fixed station layout, read
// out irregularly by per-station Poisson reporting. Attribute channels are
// the field value and its space/time derivatives around fixed baselines.
struct FieldProcessSpec {
  int stations = 50;
  double arena = 10.0;
  int sources = 3;
  double speed_min = 0.05, speed_max = 0.25;
  double width_min = 1.5, width_max = 3.5;
  double amp_min = 0.8, amp_max = 2.0;
  double noise_sigma = 0.02;
  double report_rate = 1.0;  // Poisson reports per time unit per station
  double dropout = 0.2;      // extra fraction discarded at example assembly
  double bad_fraction = 0.03;
  double length = 30.0;
  static constexpr int kAttrs = 4;

  void validate() const;
};

// Analytic field model behind an episode; exposed so tests can evaluate the
// noiseless ground truth at arbitrary (l, t).
struct FieldModel {
  struct Source {
    double cx, cy, vx, vy, amp, width;
  };
  std::vector<Source> sources;
  double arena = 10.0;

  // Returns the four attribute channels at (l, t).
  std::array<double, 4> attributes(double x, double y, double t) const;
};

struct FieldEpisode {
  Episode episode;
  FieldModel model;
  std::vector<std::array<double, 2>> station_loc;
};

FieldEpisode gen_field_episode(const FieldProcessSpec& spec, uint64_t seed,
                               int episode_id = 0);

// ---------------------------------------------------------------------------
// Entity process: two teams of typed units with piecewise-constant velocity,
// proximity damage, shield regeneration and death. Regularly sampled.
struct EntityProcessSpec {
  int team_min = 3, team_max = 6;
  int unit_types = 3;
  double arena = 8.0;
  double dt = 1.0;
  int steps = 25;
  double damage_radius = 1.5;
  double damage_scale = 1.0;     // multiplies per-type damage rates; 0 = peaceful
  double shield_max = 0.5;
  double shield_regen = 0.05;
  double direction_change_prob = 0.2;
  double pursuit_weight = 0.6;   // 0 = pure piecewise-constant random velocity
  int orient_bins = 8;

  // Per-type (speed, max health, damage rate); defaults filled when empty.
  std::vector<std::array<double, 3>> type_params;

  void validate() const;
  // feature layout: [type one-hot | health | shield | orientation one-hot]
  int feature_dim() const { return unit_types + 2 + orient_bins; }
};

Episode gen_entity_episode(const EntityProcessSpec& spec, uint64_t seed,
                           int episode_id = 0);

// ---------------------------------------------------------------------------
// History/query offset samplers.
enum class OffsetKind { kFixed, kUniform, kHalfNormal };

struct OffsetDistribution {
  OffsetKind kind = OffsetKind::kFixed;
  std::vector<double> values;  // fixed kind
  double a = 0.0, b = 0.0;     // support for uniform / half-normal
  double sigma = 5.0;          // half-normal scale
  int count = 0;               // draws for uniform / half-normal

  void validate() const;
  double support_min() const;
  double support_max() const;
};

std::vector<double> sample_offsets(const OffsetDistribution& dist, Rng& rng);

// ---------------------------------------------------------------------------
// Example assembly.
struct TrainingExample {
  PointCloud P;
  QuerySet Q;
  // Numeric targets per query row (weather: the 4 attributes; entity:
  // x, y, health, shield).
  std::vector<double> target;
  int target_cols = 0;
  std::vector<int> target_class;   // entity orientation bin; -1 when unused
  std::vector<uint8_t> alive;      // entity liveness truth; 1 for weather
  double t_ref = 0.0;
  int episode_id = 0;

  int n_queries() const { return static_cast<int>(Q.size()); }
};

struct ExampleConfig {
  double target_station_fraction = 0.1;  // weather
  double match_tolerance = 0.5;          // weather: report-to-offset matching
  double dropout = 0.2;                  // weather extra sample dropout
  int orient_bins = 8;                   // entity feature layout
};

// Base sampling interval of a regularly sampled episode (smallest positive
// gap between distinct sample times).
double episode_step(const Episode& ep);

TrainingExample make_example(const Episode& ep, double t_ref,
                             const OffsetDistribution& history,
                             const OffsetDistribution& query, Task task,
                             const ExampleConfig& cfg, Rng& rng);

struct Dataset {
  Task task = Task::kWeather;
  std::vector<TrainingExample> examples;
  int feature_dim = 0;
  int target_cols = 0;
  int loc_dim = 2;
  int orient_bins = 0;  // entity task
  std::vector<std::string> attr_names;
};

struct DatasetConfig {
  int episodes = 40;
  int examples_per_episode = 50;
  OffsetDistribution history;
  OffsetDistribution query;
  ExampleConfig example;
  int max_retries = 80;
};

Dataset make_field_dataset(const FieldProcessSpec& spec, const DatasetConfig& cfg,
                           uint64_t seed);
Dataset make_entity_dataset(const EntityProcessSpec& spec, const DatasetConfig& cfg,
                            uint64_t seed);
Dataset make_dataset_from_episodes(const std::vector<Episode>& eps, Task task,
                                   const DatasetConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------
// CSV interchange. Header:
//   episode_id, entity_id, t, loc_x, loc_y, quality_flag, feat_0..feat_{F-1}
// quality_flag in {ok, bad}; empty entity_id field encodes "no entity".
void write_csv(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> load_csv(const std::string& path);

}  // namespace tpc
