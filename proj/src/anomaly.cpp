#include "tpc/anomaly.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tpc {

void AnomalyConfig::validate() const {
  if (station_fraction <= 0.0 || station_fraction > 1.0)
    throw ConfigError("AnomalyConfig: station_fraction must be in (0, 1]");
  if (magnitude < 0.0) throw ConfigError("AnomalyConfig: magnitude must be >= 0");
  if (history_window <= 0.0)
    throw ConfigError("AnomalyConfig: history_window must be positive");
}

InjectResult inject(const std::vector<Episode>& episodes, const AnomalyConfig& cfg) {
  cfg.validate();
  InjectResult out;
  out.episodes = episodes;
  out.labels.resize(episodes.size());
  out.faults.resize(episodes.size());
  Rng root(cfg.seed);
  for (size_t e = 0; e < episodes.size(); ++e) {
    Episode& ep = out.episodes[e];
    Rng rng = root.fork(e);
    std::vector<int64_t> stations;
    for (const Sample& s : ep.samples)
      if (std::find(stations.begin(), stations.end(), s.entity) == stations.end())
        stations.push_back(s.entity);
    std::sort(stations.begin(), stations.end());
    const int n_sel = static_cast<int>(
        std::llround(cfg.station_fraction * static_cast<double>(stations.size())));
    if (n_sel < 1)
      throw ConfigError("inject: station fraction selects zero stations");
    rng.shuffle(stations);
    FaultMap& fm = out.faults[e];
    for (int i = 0; i < n_sel; ++i) {
      const int prop = static_cast<int>(rng.uniform_int(0, ep.feat_dim - 1));
      const double factor =
          rng.bernoulli(0.5) ? 1.0 + cfg.magnitude : 1.0 - cfg.magnitude;
      fm[stations[i]] = {prop, factor};
    }
    out.labels[e].assign(ep.samples.size(), 0);
    for (size_t s = 0; s < ep.samples.size(); ++s) {
      auto it = fm.find(ep.samples[s].entity);
      if (it == fm.end()) continue;
      ep.samples[s].feat[it->second.first] *= it->second.second;
      out.labels[e][s] = 1;
    }
  }
  return out;
}

std::vector<SampleScore> score_anomalies(ModelParams& model,
                                         const NormalizationStats& stats,
                                         const std::vector<Episode>& clean,
                                         const InjectResult& injected,
                                         const AnomalyConfig& cfg,
                                         Precision precision) {
  cfg.validate();
  if (clean.size() != injected.episodes.size())
    throw DataError("score_anomalies: episode count mismatch");

  struct Job {
    int episode;
    int sample;
  };
  std::vector<Job> jobs;
  for (size_t e = 0; e < injected.episodes.size(); ++e) {
    const Episode& ep = injected.episodes[e];
    for (size_t s = 0; s < ep.samples.size(); ++s) {
      const Sample& smp = ep.samples[s];
      if (!smp.quality_ok) continue;
      if (smp.t < ep.t_begin + cfg.history_window) continue;
      jobs.push_back({static_cast<int>(e), static_cast<int>(s)});
    }
  }

  std::vector<SampleScore> scores(jobs.size());
  std::vector<std::string> errors(jobs.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int j = 0; j < static_cast<int>(jobs.size()); ++j) {
    try {
      const int e = jobs[j].episode;
      const int si = jobs[j].sample;
      // Context comes from the corrupted stream by default (a broken sensor
      // feeds everyone); the clean stream when corrupt_context is off.
      const Episode& ctx_ep = cfg.corrupt_context ? injected.episodes[e] : clean[e];
      const Episode& obs_ep = injected.episodes[e];
      const Sample& target = obs_ep.samples[si];

      PointCloud P(ctx_ep.loc_dim, ctx_ep.feat_dim);
      for (const Sample& s : ctx_ep.samples) {
        if (!s.quality_ok) continue;
        if (s.entity == target.entity) continue;  // nowcast from other stations
        if (s.t < target.t - cfg.history_window || s.t >= target.t) continue;
        STPoint p;
        p.loc = s.loc;
        p.t = s.t - target.t;
        p.entity = s.entity;
        p.feat.resize(s.feat.size());
        for (size_t c = 0; c < s.feat.size(); ++c)
          p.feat[c] = stats.norm(static_cast<int>(c), s.feat[c]);
        P.add(p);
      }
      SampleScore sc;
      sc.episode = e;
      sc.sample = si;
      sc.label = injected.labels[e][si];
      if (P.size() == 0) {
        sc.score = -1.0;  // no usable context: dropped below
        scores[j] = sc;
        continue;
      }
      QuerySet Q(1);
      Q[0].loc = target.loc;
      Q[0].t = 0.0;
      Q[0].entity = target.entity;
      const std::vector<double> pred = predict(model, P, Q, precision);
      double err = 0.0;
      for (size_t c = 0; c < target.feat.size(); ++c) {
        const double d = pred[c] - stats.norm(static_cast<int>(c), target.feat[c]);
        err += d * d;
      }
      sc.score = err;
      scores[j] = sc;
    } catch (const std::exception& ex) {
      errors[j] = ex.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error("score_anomalies failed: " + e);

  std::vector<SampleScore> out;
  out.reserve(scores.size());
  for (const auto& s : scores)
    if (s.score >= 0.0) out.push_back(s);
  return out;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size())
    throw DataError("roc_auc: score/label count mismatch");
  int64_t pos = 0, neg = 0;
  for (uint8_t l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw DataError("roc_auc: need at least one positive and one negative label");

  std::vector<std::pair<double, uint8_t>> rows(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) rows[i] = {scores[i], labels[i]};
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve out;
  out.points.emplace_back(0.0, 0.0);
  int64_t tp = 0, fp = 0;
  double area = 0.0;
  size_t i = 0;
  while (i < rows.size()) {
    // Equal scores move together: one step per distinct threshold.
    size_t j = i;
    int64_t dtp = 0, dfp = 0;
    while (j < rows.size() && rows[j].first == rows[i].first) {
      (rows[j].second ? dtp : dfp) += 1;
      ++j;
    }
    const double fpr0 = static_cast<double>(fp) / neg;
    const double tpr0 = static_cast<double>(tp) / pos;
    tp += dtp;
    fp += dfp;
    const double fpr1 = static_cast<double>(fp) / neg;
    const double tpr1 = static_cast<double>(tp) / pos;
    area += (fpr1 - fpr0) * 0.5 * (tpr0 + tpr1);
    out.points.emplace_back(fpr1, tpr1);
    i = j;
  }
  out.auroc = area;
  return out;
}

}  // namespace tpc
