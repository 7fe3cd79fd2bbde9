#include "tpc/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace tpc {

void FieldProcessSpec::validate() const {
  if (stations < 1 || sources < 1) throw ConfigError("field spec: counts must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("field spec: dropout must be in [0, 1)");
  if (report_rate <= 0.0 || length <= 0.0 || arena <= 0.0)
    throw ConfigError("field spec: rate, length and arena must be positive");
}

namespace {

// Reflects an unbounded coordinate into [0, arena]; returns the folded
// position and the direction sign of motion after folding.
std::pair<double, double> fold(double x, double arena) {
  const double period = 2.0 * arena;
  double m = std::fmod(x, period);
  if (m < 0) m += period;
  if (m <= arena) return {m, 1.0};
  return {period - m, -1.0};
}

}  // namespace

std::array<double, 4> FieldModel::attributes(double x, double y, double t) const {
  double f = 0.0, fx = 0.0, fy = 0.0, ft = 0.0;
  for (const auto& s : sources) {
    const auto [cx, sx] = fold(s.cx + s.vx * t, arena);
    const auto [cy, sy] = fold(s.cy + s.vy * t, arena);
    const double dx = x - cx;
    const double dy = y - cy;
    const double w2 = s.width * s.width;
    const double g = s.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * w2));
    f += g;
    fx += g * (-dx / w2);
    fy += g * (-dy / w2);
    // Source velocity after wall reflections.
    const double vcx = s.vx * sx;
    const double vcy = s.vy * sy;
    ft += g * (dx * vcx + dy * vcy) / w2;
  }
  // Offset baselines keep every channel scaled like a physical sensor reading.
  return {2.0 + f, 1.0 + 0.6 * fx, 1.0 + 0.6 * fy, 1.5 + 2.0 * ft};
}

FieldEpisode gen_field_episode(const FieldProcessSpec& spec, uint64_t seed,
                               int episode_id) {
  spec.validate();
  Rng rng(seed);
  FieldEpisode out;
  out.model.arena = spec.arena;
  for (int s = 0; s < spec.sources; ++s) {
    FieldModel::Source src;
    src.cx = rng.uniform(0.0, spec.arena);
    src.cy = rng.uniform(0.0, spec.arena);
    const double speed = rng.uniform(spec.speed_min, spec.speed_max);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    src.vx = speed * std::cos(ang);
    src.vy = speed * std::sin(ang);
    src.amp = rng.uniform(spec.amp_min, spec.amp_max);
    src.width = rng.uniform(spec.width_min, spec.width_max);
    out.model.sources.push_back(src);
  }
  out.station_loc.resize(spec.stations);
  for (auto& l : out.station_loc)
    l = {rng.uniform(0.0, spec.arena), rng.uniform(0.0, spec.arena)};

  Episode& ep = out.episode;
  ep.id = episode_id;
  ep.loc_dim = 2;
  ep.feat_dim = FieldProcessSpec::kAttrs;
  ep.t_begin = 0.0;
  ep.t_end = spec.length;

  for (int j = 0; j < spec.stations; ++j) {
    double t = rng.exponential(spec.report_rate);
    while (t < spec.length) {
      Sample s;
      s.entity = j;
      s.t = t;
      s.loc = {out.station_loc[j][0], out.station_loc[j][1]};
      auto a = out.model.attributes(s.loc[0], s.loc[1], t);
      s.feat.assign(a.begin(), a.end());
      if (spec.noise_sigma > 0.0)
        for (double& v : s.feat) v += rng.normal(0.0, spec.noise_sigma);
      s.quality_ok = !rng.bernoulli(spec.bad_fraction);
      if (!s.quality_ok) {
        // A malfunctioning sensor reports junk.
        for (double& v : s.feat) v *= 1.0 + 5.0 * rng.uniform();
      }
      ep.samples.push_back(std::move(s));
      t += rng.exponential(spec.report_rate);
    }
  }
  std::sort(ep.samples.begin(), ep.samples.end(), [](const Sample& a, const Sample& b) {
    return a.t != b.t ? a.t < b.t : a.entity < b.entity;
  });
  return out;
}

void EntityProcessSpec::validate() const {
  if (team_min < 1 || team_max < team_min)
    throw ConfigError("entity spec: team sizes invalid");
  if (unit_types < 1 || orient_bins < 2 || steps < 2)
    throw ConfigError("entity spec: counts invalid");
  if (dt <= 0.0 || arena <= 0.0) throw ConfigError("entity spec: dt/arena invalid");
}

namespace {

struct UnitState {
  int64_t id;
  int team;
  int type;
  double x, y, vx, vy;
  double health, shield;
  bool alive = true;
};

int orient_bin_of(double vx, double vy, int bins) {
  const double ang = std::atan2(vy, vx) + std::numbers::pi;  // [0, 2pi]
  int b = static_cast<int>(ang / (2.0 * std::numbers::pi) * bins);
  if (b >= bins) b = bins - 1;
  return b;
}

}  // namespace

Episode gen_entity_episode(const EntityProcessSpec& spec, uint64_t seed,
                           int episode_id) {
  spec.validate();
  std::vector<std::array<double, 3>> types = spec.type_params;
  if (types.empty()) {
    types = {{0.35, 1.0, 0.07}, {0.25, 1.6, 0.05}, {0.15, 2.4, 0.10}};
    types.resize(spec.unit_types, {0.25, 1.5, 0.06});
  }
  if (static_cast<int>(types.size()) != spec.unit_types)
    throw ConfigError("entity spec: type_params size mismatch");

  Rng rng(seed);
  std::vector<UnitState> units;
  int64_t next_id = 0;
  for (int team = 0; team < 2; ++team) {
    const int n = static_cast<int>(rng.uniform_int(spec.team_min, spec.team_max));
    // Teams start in opposite halves and close in.
    for (int u = 0; u < n; ++u) {
      UnitState s;
      s.id = next_id++;
      s.team = team;
      s.type = static_cast<int>(rng.uniform_int(0, spec.unit_types - 1));
      s.x = rng.uniform(0.15 * spec.arena, 0.85 * spec.arena);
      s.y = team == 0 ? rng.uniform(0.05 * spec.arena, 0.35 * spec.arena)
                      : rng.uniform(0.65 * spec.arena, 0.95 * spec.arena);
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double sp = types[s.type][0];
      s.vx = sp * std::cos(ang);
      s.vy = sp * std::sin(ang);
      s.health = types[s.type][1];
      s.shield = spec.shield_max;
      units.push_back(s);
    }
  }

  Episode ep;
  ep.id = episode_id;
  ep.loc_dim = 2;
  ep.feat_dim = spec.feature_dim();
  ep.t_begin = 0.0;
  ep.t_end = (spec.steps - 1) * spec.dt;

  auto emit = [&](const UnitState& u, double t) {
    Sample s;
    s.entity = u.id;
    s.t = t;
    s.loc = {u.x, u.y};
    s.feat.assign(spec.feature_dim(), 0.0);
    s.feat[u.type] = 1.0;
    s.feat[spec.unit_types] = u.health;
    s.feat[spec.unit_types + 1] = u.shield;
    s.feat[spec.unit_types + 2 + orient_bin_of(u.vx, u.vy, spec.orient_bins)] = 1.0;
    ep.samples.push_back(std::move(s));
  };

  for (int step = 0; step < spec.steps; ++step) {
    const double t = step * spec.dt;
    for (const auto& u : units)
      if (u.alive) emit(u, t);
    if (step + 1 == spec.steps) break;

    // Damage resolution against current positions.
    std::vector<double> incoming(units.size(), 0.0);
    for (size_t i = 0; i < units.size(); ++i) {
      if (!units[i].alive) continue;
      for (size_t j = 0; j < units.size(); ++j) {
        if (i == j || !units[j].alive || units[j].team == units[i].team) continue;
        const double dx = units[i].x - units[j].x;
        const double dy = units[i].y - units[j].y;
        if (std::sqrt(dx * dx + dy * dy) <= spec.damage_radius)
          incoming[i] += spec.damage_scale * types[units[j].type][2] * spec.dt;
      }
    }
    for (size_t i = 0; i < units.size(); ++i) {
      UnitState& u = units[i];
      if (!u.alive) continue;
      if (incoming[i] > 0.0) {
        const double absorbed = std::min(u.shield, incoming[i]);
        u.shield -= absorbed;
        u.health -= incoming[i] - absorbed;
        if (u.health <= 0.0) {
          u.health = 0.0;
          u.alive = false;
          continue;
        }
      } else {
        u.shield = std::min(spec.shield_max, u.shield + spec.shield_regen * spec.dt);
      }
      // Piecewise-constant velocity with occasional redirection, optionally
      // biased toward the nearest living enemy.
      if (rng.bernoulli(spec.direction_change_prob)) {
        double tx = 0.0, ty = 0.0;
        double bestd = kInfDist;
        for (const auto& e : units) {
          if (!e.alive || e.team == u.team) continue;
          const double dx = e.x - u.x, dy = e.y - u.y;
          const double d = std::sqrt(dx * dx + dy * dy);
          if (d < bestd) {
            bestd = d;
            tx = dx;
            ty = dy;
          }
        }
        const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
        double dirx = std::cos(ang), diry = std::sin(ang);
        if (bestd < kInfDist && bestd > 1e-9) {
          dirx = (1.0 - spec.pursuit_weight) * dirx + spec.pursuit_weight * tx / bestd;
          diry = (1.0 - spec.pursuit_weight) * diry + spec.pursuit_weight * ty / bestd;
          const double norm = std::sqrt(dirx * dirx + diry * diry);
          if (norm > 1e-9) {
            dirx /= norm;
            diry /= norm;
          }
        }
        const double sp = types[u.type][0];
        u.vx = sp * dirx;
        u.vy = sp * diry;
      }
      u.x += u.vx * spec.dt;
      u.y += u.vy * spec.dt;
      // Bounce off the arena walls.
      if (u.x < 0.0) { u.x = -u.x; u.vx = -u.vx; }
      if (u.x > spec.arena) { u.x = 2.0 * spec.arena - u.x; u.vx = -u.vx; }
      if (u.y < 0.0) { u.y = -u.y; u.vy = -u.vy; }
      if (u.y > spec.arena) { u.y = 2.0 * spec.arena - u.y; u.vy = -u.vy; }
    }
  }

  std::sort(ep.samples.begin(), ep.samples.end(), [](const Sample& a, const Sample& b) {
    return a.t != b.t ? a.t < b.t : a.entity < b.entity;
  });
  return ep;
}

void OffsetDistribution::validate() const {
  switch (kind) {
    case OffsetKind::kFixed:
      if (values.empty()) throw ConfigError("offset distribution: empty fixed list");
      break;
    case OffsetKind::kUniform:
    case OffsetKind::kHalfNormal:
      if (!(a < b)) throw ConfigError("offset distribution: require a < b");
      if (count < 1) throw ConfigError("offset distribution: count must be >= 1");
      if (kind == OffsetKind::kHalfNormal && sigma <= 0.0)
        throw ConfigError("offset distribution: sigma must be positive");
      break;
  }
}

double OffsetDistribution::support_min() const {
  if (kind == OffsetKind::kFixed)
    return *std::min_element(values.begin(), values.end());
  return a;
}

double OffsetDistribution::support_max() const {
  if (kind == OffsetKind::kFixed)
    return *std::max_element(values.begin(), values.end());
  return b;
}

std::vector<double> sample_offsets(const OffsetDistribution& dist, Rng& rng) {
  dist.validate();
  std::vector<double> out;
  switch (dist.kind) {
    case OffsetKind::kFixed:
      out = dist.values;
      break;
    case OffsetKind::kUniform:
      out.reserve(dist.count);
      for (int i = 0; i < dist.count; ++i) out.push_back(rng.uniform(dist.a, dist.b));
      break;
    case OffsetKind::kHalfNormal: {
      // |N(0, sigma)| measured from b, reflected between the walls a and b.
      out.reserve(dist.count);
      const double span = dist.b - dist.a;
      for (int i = 0; i < dist.count; ++i) {
        double d = std::abs(rng.normal(0.0, dist.sigma));
        d = std::fmod(d, 2.0 * span);
        if (d > span) d = 2.0 * span - d;
        out.push_back(dist.b - d);
      }
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Per-entity view of an episode: indices into ep.samples, ascending by time.
std::map<int64_t, std::vector<int>> group_by_entity(const Episode& ep) {
  std::map<int64_t, std::vector<int>> g;
  for (int i = 0; i < static_cast<int>(ep.samples.size()); ++i)
    g[ep.samples[i].entity].push_back(i);
  return g;
}

// Nearest sample of one entity to time t within tolerance; -1 when none.
// Candidates may be restricted to quality-ok samples.
int nearest_sample(const Episode& ep, const std::vector<int>& idx, double t,
                   double tol, bool ok_only) {
  int best = -1;
  double bestd = tol;
  for (int i : idx) {
    const Sample& s = ep.samples[i];
    if (ok_only && !s.quality_ok) continue;
    const double d = std::abs(s.t - t);
    if (d < bestd || (d == bestd && best >= 0 && i < best)) {
      best = i;
      bestd = d;
    }
  }
  return best;
}

TrainingExample make_weather_example(const Episode& ep, double t_ref,
                                     const std::vector<double>& H,
                                     const std::vector<double>& R,
                                     const ExampleConfig& cfg, Rng& rng) {
  const auto groups = group_by_entity(ep);
  std::vector<int64_t> stations;
  stations.reserve(groups.size());
  for (const auto& [id, idx] : groups) stations.push_back(id);
  if (stations.size() < 2)
    throw DataError("make_example: need at least two stations");

  const int n_targets = std::max(
      1, static_cast<int>(std::ceil(cfg.target_station_fraction * stations.size())));
  std::vector<int64_t> shuffled = stations;
  rng.shuffle(shuffled);
  std::set<int64_t> target_set(shuffled.begin(), shuffled.begin() + n_targets);

  TrainingExample ex;
  ex.t_ref = t_ref;
  ex.episode_id = ep.id;
  ex.P = PointCloud(ep.loc_dim, ep.feat_dim);
  ex.target_cols = ep.feat_dim;

  // Input cloud: non-target stations matched to the history offsets, bad
  // samples dropped, then the extra dropout fraction.
  std::set<int> chosen;
  for (int64_t st : stations) {
    if (target_set.count(st)) continue;
    const auto& idx = groups.at(st);
    for (double h : H) {
      const int s = nearest_sample(ep, idx, t_ref + h, cfg.match_tolerance, true);
      if (s >= 0) chosen.insert(s);
    }
  }
  for (int s : chosen) {
    if (cfg.dropout > 0.0 && rng.bernoulli(cfg.dropout)) continue;
    const Sample& smp = ep.samples[s];
    STPoint p;
    p.loc = smp.loc;
    p.t = smp.t - t_ref;
    p.entity = smp.entity;
    p.feat = smp.feat;
    ex.P.add(p);
  }

  for (int64_t st : target_set) {
    const auto& idx = groups.at(st);
    for (double r : R) {
      const int s = nearest_sample(ep, idx, t_ref + r, cfg.match_tolerance, true);
      if (s < 0) continue;
      const Sample& smp = ep.samples[s];
      QueryPoint q;
      q.loc = smp.loc;
      q.t = smp.t - t_ref;
      q.entity = smp.entity;
      ex.Q.push_back(std::move(q));
      ex.target.insert(ex.target.end(), smp.feat.begin(), smp.feat.end());
      ex.target_class.push_back(-1);
      ex.alive.push_back(1);
    }
  }

  if (ex.P.size() == 0) throw DataError("make_example: empty input cloud");
  if (ex.Q.empty()) throw DataError("make_example: no resolvable queries");
  return ex;
}

TrainingExample make_entity_example(const Episode& ep, double t_ref,
                                    const std::vector<double>& H,
                                    const std::vector<double>& R,
                                    const ExampleConfig& cfg) {
  const auto groups = group_by_entity(ep);
  const double step = episode_step(ep);
  const double tol = step / 4.0;

  // Regular sampling: offsets snap to the base step.
  auto sample_at = [&](const std::vector<int>& idx, double t) -> int {
    for (int i : idx)
      if (std::abs(ep.samples[i].t - t) <= tol) return i;
    return -1;
  };
  auto snap = [&](double off) { return std::round(off / step) * step; };

  TrainingExample ex;
  ex.t_ref = t_ref;
  ex.episode_id = ep.id;
  ex.P = PointCloud(ep.loc_dim, ep.feat_dim);
  ex.target_cols = 4;  // x, y, health, shield

  for (const auto& [id, idx] : groups) {
    for (double h : H) {
      const int s = sample_at(idx, t_ref + snap(h));
      if (s < 0) continue;  // dead or unsampled at that step
      const Sample& smp = ep.samples[s];
      STPoint p;
      p.loc = smp.loc;
      p.t = smp.t - t_ref;
      p.entity = smp.entity;
      p.feat = smp.feat;
      ex.P.add(p);
    }
  }
  if (ex.P.size() == 0) throw DataError("make_example: empty input cloud");

  // Queries cover every unit that ever existed, at every query offset; dead
  // units keep an alive=0 row with masked property targets.
  const int health_at = ep.feat_dim - cfg.orient_bins - 2;
  if (health_at < 1)
    throw DataError("make_example: entity feature layout too small");
  for (const auto& [id, idx] : groups) {
    // Bookkeeping location: last observed sample at or before t_ref, else first.
    const Sample* last = &ep.samples[idx.front()];
    for (int i : idx) {
      if (ep.samples[i].t <= t_ref) last = &ep.samples[i];
      else break;
    }
    for (double r : R) {
      QueryPoint q;
      q.loc = last->loc;
      q.t = snap(r);
      q.entity = id;
      ex.Q.push_back(std::move(q));
      const int s = sample_at(idx, t_ref + snap(r));
      if (s >= 0) {
        const Sample& smp = ep.samples[s];
        ex.alive.push_back(1);
        ex.target.push_back(smp.loc[0]);
        ex.target.push_back(smp.loc[1]);
        ex.target.push_back(smp.feat[health_at]);
        ex.target.push_back(smp.feat[health_at + 1]);
        int bin = 0;
        for (int b = 0; b < cfg.orient_bins; ++b)
          if (smp.feat[health_at + 2 + b] == 1.0) bin = b;
        ex.target_class.push_back(bin);
      } else {
        ex.alive.push_back(0);
        ex.target.insert(ex.target.end(), {0.0, 0.0, 0.0, 0.0});
        ex.target_class.push_back(-1);
      }
    }
  }
  if (ex.Q.empty()) throw DataError("make_example: no queries");
  return ex;
}

}  // namespace

double episode_step(const Episode& ep) {
  std::vector<double> times;
  times.reserve(ep.samples.size());
  for (const Sample& s : ep.samples) times.push_back(s.t);
  std::sort(times.begin(), times.end());
  double step = 0.0;
  for (size_t i = 1; i < times.size(); ++i) {
    const double gap = times[i] - times[i - 1];
    if (gap > 1e-12 && (step == 0.0 || gap < step)) step = gap;
  }
  if (step == 0.0) step = 1.0;
  return step;
}

TrainingExample make_example(const Episode& ep, double t_ref,
                             const OffsetDistribution& history,
                             const OffsetDistribution& query, Task task,
                             const ExampleConfig& cfg, Rng& rng) {
  history.validate();
  query.validate();
  const double lo_shift = std::min(history.support_min(), query.support_min());
  const double hi_shift = std::max(history.support_max(), query.support_max());
  if (t_ref + lo_shift < ep.t_begin - 1e-9 || t_ref + hi_shift > ep.t_end + 1e-9)
    throw DataError("make_example: episode too short for the requested offsets");

  std::vector<double> H = sample_offsets(history, rng);
  std::vector<double> R = sample_offsets(query, rng);
  // Forecasting configurations must not peek forward in the history.
  if (!R.empty() && R.front() > 0.0 && H.back() > 0.0)
    throw DataError("make_example: forecasting requires history offsets <= 0");

  if (task == Task::kEntity) {
    std::sort(H.begin(), H.end());
    H.erase(std::unique(H.begin(), H.end()), H.end());
    std::sort(R.begin(), R.end());
    R.erase(std::unique(R.begin(), R.end()), R.end());
    return make_entity_example(ep, t_ref, H, R, cfg);
  }
  return make_weather_example(ep, t_ref, H, R, cfg, rng);
}

namespace {

Dataset assemble_dataset(const std::vector<Episode>& eps, Task task,
                         const DatasetConfig& cfg, uint64_t seed) {
  Dataset ds;
  ds.task = task;
  if (task == Task::kWeather) {
    ds.attr_names = {"attr0", "attr1", "attr2", "attr3"};
  } else {
    ds.attr_names = {"position", "health", "shield", "orientation", "alive"};
    ds.orient_bins = 8;
  }
  Rng root(seed);
  for (size_t e = 0; e < eps.size(); ++e) {
    const Episode& ep = eps[e];
    Rng ep_rng = root.fork(1000 + e);
    const double lo_shift = std::min(cfg.history.support_min(),
                                     cfg.query.support_min());
    const double hi_shift = std::max(cfg.history.support_max(),
                                     cfg.query.support_max());
    const double lo = ep.t_begin - lo_shift;
    const double hi = ep.t_end - hi_shift;
    if (hi < lo)
      throw DataError("dataset: episode too short for offset supports");
    const double step = task == Task::kEntity ? episode_step(ep) : 0.0;
    for (int x = 0; x < cfg.examples_per_episode; ++x) {
      TrainingExample ex;
      bool made = false;
      for (int attempt = 0; attempt < cfg.max_retries && !made; ++attempt) {
        double t_ref;
        if (task == Task::kEntity) {
          // Reference times align to the base sampling grid.
          const int64_t s_lo = static_cast<int64_t>(std::ceil(lo / step - 1e-9));
          const int64_t s_hi = static_cast<int64_t>(std::floor(hi / step + 1e-9));
          t_ref = step * static_cast<double>(ep_rng.uniform_int(s_lo, s_hi));
        } else {
          t_ref = ep_rng.uniform(lo, hi);
        }
        try {
          ex = make_example(ep, t_ref, cfg.history, cfg.query, task, cfg.example,
                            ep_rng);
          made = true;
        } catch (const DataError&) {
        }
      }
      if (!made)
        throw DataError("dataset: failed to assemble an example after retries");
      ds.examples.push_back(std::move(ex));
    }
  }
  if (ds.examples.empty()) throw DataError("dataset: no examples");
  ds.feature_dim = ds.examples.front().P.feat_dim();
  ds.target_cols = ds.examples.front().target_cols;
  ds.loc_dim = ds.examples.front().P.loc_dim();
  return ds;
}

}  // namespace

Dataset make_field_dataset(const FieldProcessSpec& spec, const DatasetConfig& cfg,
                           uint64_t seed) {
  std::vector<Episode> eps;
  eps.reserve(cfg.episodes);
  Rng root(seed);
  for (int e = 0; e < cfg.episodes; ++e)
    eps.push_back(gen_field_episode(spec, root.fork(e).next_u64(), e).episode);
  return assemble_dataset(eps, Task::kWeather, cfg, seed ^ 0x5eedULL);
}

Dataset make_entity_dataset(const EntityProcessSpec& spec, const DatasetConfig& cfg,
                            uint64_t seed) {
  std::vector<Episode> eps;
  eps.reserve(cfg.episodes);
  Rng root(seed);
  for (int e = 0; e < cfg.episodes; ++e)
    eps.push_back(gen_entity_episode(spec, root.fork(e).next_u64(), e));
  return assemble_dataset(eps, Task::kEntity, cfg, seed ^ 0x5eedULL);
}

Dataset make_dataset_from_episodes(const std::vector<Episode>& eps, Task task,
                                   const DatasetConfig& cfg, uint64_t seed) {
  return assemble_dataset(eps, task, cfg, seed);
}

void write_csv(const std::vector<Episode>& episodes, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_csv: cannot open " + path);
  int feat_dim = episodes.empty() ? 0 : episodes.front().feat_dim;
  f << "episode_id,entity_id,t,loc_x,loc_y,quality_flag";
  for (int j = 0; j < feat_dim; ++j) f << ",feat_" << j;
  f << "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const Episode& ep : episodes) {
    if (ep.feat_dim != feat_dim)
      throw IoError("write_csv: episodes disagree on feature count");
    for (const Sample& s : ep.samples) {
      f << ep.id << ",";
      if (s.entity != kNoEntity) f << s.entity;
      f << "," << num(s.t) << "," << num(s.loc[0]) << "," << num(s.loc[1]) << ","
        << (s.quality_ok ? "ok" : "bad");
      for (double v : s.feat) f << "," << num(v);
      f << "\n";
    }
  }
}

std::vector<Episode> load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.empty())
    throw IoError("load_csv: empty file " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  };

  const auto header = split(line);
  if (header.size() < 7 || header[0] != "episode_id" || header[1] != "entity_id" ||
      header[2] != "t" || header[3] != "loc_x" || header[4] != "loc_y" ||
      header[5] != "quality_flag")
    throw IoError("load_csv: unexpected header in " + path);
  const int feat_dim = static_cast<int>(header.size()) - 6;
  for (int j = 0; j < feat_dim; ++j)
    if (header[6 + j] != "feat_" + std::to_string(j))
      throw IoError("load_csv: unexpected feature column in " + path);

  std::map<int, Episode> eps;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    auto bad = [&](const std::string& why) {
      return IoError("load_csv: line " + std::to_string(lineno) + ": " + why);
    };
    if (static_cast<int>(cells.size()) != 6 + feat_dim)
      throw bad("expected " + std::to_string(6 + feat_dim) + " fields, got " +
                std::to_string(cells.size()));
    auto parse_num = [&](const std::string& s, const std::string& field) {
      try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        if (std::isnan(v)) throw bad("NaN in required field " + field);
        return v;
      } catch (const IoError&) {
        throw;
      } catch (const std::exception&) {
        throw bad("cannot parse number '" + s + "' in field " + field);
      }
    };
    Sample s;
    const int ep_id = static_cast<int>(parse_num(cells[0], "episode_id"));
    s.entity = cells[1].empty() ? kNoEntity
                                : static_cast<int64_t>(parse_num(cells[1], "entity_id"));
    s.t = parse_num(cells[2], "t");
    s.loc = {parse_num(cells[3], "loc_x"), parse_num(cells[4], "loc_y")};
    if (cells[5] == "ok") {
      s.quality_ok = true;
    } else if (cells[5] == "bad") {
      s.quality_ok = false;
    } else {
      throw bad("quality_flag must be ok or bad");
    }
    for (int j = 0; j < feat_dim; ++j)
      s.feat.push_back(parse_num(cells[6 + j], "feat_" + std::to_string(j)));
    Episode& ep = eps[ep_id];
    ep.id = ep_id;
    ep.feat_dim = feat_dim;
    ep.samples.push_back(std::move(s));
  }
  std::vector<Episode> out;
  for (auto& [id, ep] : eps) {
    std::sort(ep.samples.begin(), ep.samples.end(),
              [](const Sample& a, const Sample& b) {
                return a.t != b.t ? a.t < b.t : a.entity < b.entity;
              });
    if (!ep.samples.empty()) {
      ep.t_begin = ep.samples.front().t;
      ep.t_end = ep.samples.back().t;
    }
    out.push_back(std::move(ep));
  }
  if (out.empty()) throw IoError("load_csv: no data rows in " + path);
  return out;
}

}  // namespace tpc
