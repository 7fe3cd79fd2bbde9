#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "tpc/datagen.hpp"
#include "tpc/training.hpp"

namespace tpc {

struct AnomalyConfig {
  double station_fraction = 0.33;
  double magnitude = 0.25;
  // A broken sensor also corrupts the context other queries see; disable to
  // perturb target samples only.
  bool corrupt_context = true;
  double history_window = 10.0;  // context preceding each scored sample
  uint64_t seed = 7;

  void validate() const;
};

// Which stations were corrupted in one episode: station -> (property, factor).
using FaultMap = std::map<int64_t, std::pair<int, double>>;

struct InjectResult {
  std::vector<Episode> episodes;             // perturbed copies
  std::vector<std::vector<uint8_t>> labels;  // per episode, per sample
  std::vector<FaultMap> faults;
};

// Scales one randomly chosen property of each selected station by
// (1 +- magnitude) across all of that station's samples. Non-selected
// stations are bitwise unchanged.
InjectResult inject(const std::vector<Episode>& episodes, const AnomalyConfig& cfg);

struct SampleScore {
  int episode = 0;
  int sample = 0;
  double score = 0.0;
  uint8_t label = 0;
};

// Prediction-error anomaly scores: for every quality-ok sample with enough
// preceding context, the model nowcasts the sample's properties from the
// other stations' samples in the preceding window; the score is the summed
// normalized squared error against the observed (possibly corrupted) values.
std::vector<SampleScore> score_anomalies(ModelParams& model,
                                         const NormalizationStats& stats,
                                         const std::vector<Episode>& clean,
                                         const InjectResult& injected,
                                         const AnomalyConfig& cfg,
                                         Precision precision = Precision::kDouble);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
  double auroc = 0.0;
};

// Threshold sweep over unique scores, ties grouped into single steps,
// trapezoidal area. Requires both classes present.
RocCurve roc_auc(std::span<const double> scores, std::span<const uint8_t> labels);

}  // namespace tpc
