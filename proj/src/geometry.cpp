#include "tpc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tpc {

void PointCloud::add(const STPoint& p) {
  if (static_cast<int>(p.loc.size()) != loc_dim_)
    throw DataError("PointCloud: location dimension mismatch");
  if (static_cast<int>(p.feat.size()) != feat_dim_)
    throw DataError("PointCloud: feature dimension mismatch");
  if (!std::isfinite(p.t)) throw DataError("PointCloud: non-finite time");
  loc_.insert(loc_.end(), p.loc.begin(), p.loc.end());
  t_.push_back(p.t);
  entity_.push_back(p.entity);
  feat_.insert(feat_.end(), p.feat.begin(), p.feat.end());
}

void PointCloud::reserve(int n) {
  loc_.reserve(static_cast<size_t>(n) * loc_dim_);
  t_.reserve(n);
  entity_.reserve(n);
  feat_.reserve(static_cast<size_t>(n) * feat_dim_);
}

STPoint PointCloud::point(int i) const {
  STPoint p;
  auto l = loc(i);
  p.loc.assign(l.begin(), l.end());
  p.t = t_[i];
  p.entity = entity_[i];
  auto f = feat(i);
  p.feat.assign(f.begin(), f.end());
  return p;
}

void PointCloud::set_feat_matrix(std::vector<double> values, int new_dim) {
  if (values.size() != static_cast<size_t>(size()) * new_dim)
    throw DataError("PointCloud: feature matrix size mismatch");
  feat_ = std::move(values);
  feat_dim_ = new_dim;
}

const char* distance_kind_name(DistanceKind k) {
  switch (k) {
    case DistanceKind::kSpatial: return "spatial";
    case DistanceKind::kTemporal: return "temporal";
    case DistanceKind::kEntityTemporal: return "entity_temporal";
    case DistanceKind::kCombined: return "combined";
    case DistanceKind::kQuerySpatial: return "query_spatial";
    case DistanceKind::kQueryEntity: return "query_entity";
  }
  return "?";
}

void DistanceSpec::validate() const {
  if (k < 1) throw ConfigError("DistanceSpec: neighbor cap k must be positive");
  if (uses_time_window() && eps_t <= 0.0)
    throw ConfigError("DistanceSpec: eps_t must be positive for spatial kinds");
  if (uses_space_window() && eps_s <= 0.0)
    throw ConfigError("DistanceSpec: eps_s must be positive for the temporal kind");
  if (kind == DistanceKind::kCombined && tradeoff_x <= 0.0)
    throw ConfigError("DistanceSpec: tradeoff x must be positive");
}

int DistanceSpec::delta_dim(int loc_dim) const {
  switch (kind) {
    case DistanceKind::kSpatial:
    case DistanceKind::kQuerySpatial:
      return loc_dim;
    case DistanceKind::kTemporal:
    case DistanceKind::kEntityTemporal:
    case DistanceKind::kQueryEntity:
      return 1;
    case DistanceKind::kCombined:
      return loc_dim + 1;
  }
  return 0;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

inline double spatial_dist(std::span<const double> li, double ti,
                           std::span<const double> lj, double tj, double eps_t) {
  if (std::abs(ti - tj) > eps_t) return kInfDist;
  return euclidean(li, lj);
}

inline double temporal_dist(std::span<const double> li, double ti,
                            std::span<const double> lj, double tj, double eps_s) {
  if (euclidean(li, lj) > eps_s) return kInfDist;
  return std::abs(ti - tj);
}

inline double entity_dist(int64_t ei, double ti, int64_t ej, double tj) {
  if (ei == kNoEntity || ej == kNoEntity)
    throw DataError("d_entity: point lacks an entity id");
  if (ei != ej) return kInfDist;
  return std::abs(ti - tj);
}

inline double combined_dist(std::span<const double> li, double ti,
                            std::span<const double> lj, double tj, double x) {
  double s = 0.0;
  for (size_t i = 0; i < li.size(); ++i) {
    const double d = li[i] - lj[i];
    s += d * d;
  }
  const double dt = ti - tj;
  return std::sqrt(s + x * dt * dt);
}

}  // namespace

double d_spatial(const STPoint& a, const STPoint& b, double eps_t) {
  return spatial_dist(a.loc, a.t, b.loc, b.t, eps_t);
}
double d_temporal(const STPoint& a, const STPoint& b, double eps_s) {
  return temporal_dist(a.loc, a.t, b.loc, b.t, eps_s);
}
double d_entity(const STPoint& a, const STPoint& b) {
  return entity_dist(a.entity, a.t, b.entity, b.t);
}
double d_combined(const STPoint& a, const STPoint& b, double x) {
  return combined_dist(a.loc, a.t, b.loc, b.t, x);
}

double distance(const DistanceSpec& spec, const PointCloud& cloud, int j,
                const Center& c) {
  switch (spec.kind) {
    case DistanceKind::kSpatial:
    case DistanceKind::kQuerySpatial:
      return spatial_dist(cloud.loc(j), cloud.time(j), c.loc, c.t, spec.eps_t);
    case DistanceKind::kTemporal:
      return temporal_dist(cloud.loc(j), cloud.time(j), c.loc, c.t, spec.eps_s);
    case DistanceKind::kEntityTemporal:
    case DistanceKind::kQueryEntity:
      return entity_dist(cloud.entity(j), cloud.time(j), c.entity, c.t);
    case DistanceKind::kCombined:
      return combined_dist(cloud.loc(j), cloud.time(j), c.loc, c.t, spec.tradeoff_x);
  }
  return kInfDist;
}

void positional_difference(const DistanceSpec& spec, const PointCloud& cloud, int i,
                           const Center& c, std::span<double> out) {
  switch (spec.kind) {
    case DistanceKind::kSpatial:
    case DistanceKind::kQuerySpatial: {
      auto l = cloud.loc(i);
      for (size_t d = 0; d < l.size(); ++d) out[d] = l[d] - c.loc[d];
      break;
    }
    case DistanceKind::kTemporal:
    case DistanceKind::kEntityTemporal:
    case DistanceKind::kQueryEntity:
      out[0] = cloud.time(i) - c.t;
      break;
    case DistanceKind::kCombined: {
      auto l = cloud.loc(i);
      for (size_t d = 0; d < l.size(); ++d) out[d] = l[d] - c.loc[d];
      out[l.size()] = cloud.time(i) - c.t;
      break;
    }
  }
}

namespace {

// Shared final selection: score unique candidates, drop infinities, order by
// (distance, index), truncate to k. Both the brute-force path and every index
// path funnel through this, so they agree bitwise.
std::vector<int> select_k(const PointCloud& cloud, const Center& c,
                          const DistanceSpec& spec, std::vector<int> cand) {
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  std::vector<std::pair<double, int>> scored;
  scored.reserve(cand.size());
  for (int j : cand) {
    const double d = distance(spec, cloud, j, c);
    if (d < kInfDist) scored.emplace_back(d, j);
  }
  const size_t keep = std::min<size_t>(spec.k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end());
  std::vector<int> out(keep);
  for (size_t i = 0; i < keep; ++i) out[i] = scored[i].second;
  return out;
}

int64_t floor_div_bucket(double v, double width) {
  return static_cast<int64_t>(std::floor(v / width));
}

uint64_t mix_cell(std::span<const int64_t> coords) {
  uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (int64_t c : coords) {
    uint64_t z = static_cast<uint64_t>(c) + 0x9e3779b97f4a7c15ULL + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    h = z ^ (z >> 31);
  }
  return h;
}

}  // namespace

std::vector<int> k_nearest(const PointCloud& cloud, const Center& c,
                           const DistanceSpec& spec) {
  spec.validate();
  std::vector<int> all(cloud.size());
  for (int i = 0; i < cloud.size(); ++i) all[i] = i;
  return select_k(cloud, c, spec, std::move(all));
}

NeighborIndex::NeighborIndex(const PointCloud& cloud, const DistanceSpec& spec)
    : cloud_(cloud), spec_(spec) {
  spec_.validate();
  const int n = cloud.size();
  switch (spec_.kind) {
    case DistanceKind::kSpatial:
    case DistanceKind::kQuerySpatial:
      for (int i = 0; i < n; ++i)
        time_buckets_[floor_div_bucket(cloud.time(i), spec_.eps_t)].push_back(i);
      break;
    case DistanceKind::kTemporal: {
      grid_dims_ = cloud.loc_dim();
      cell_size_ = spec_.eps_s;
      std::vector<int64_t> cc(grid_dims_);
      for (int i = 0; i < n; ++i) {
        auto l = cloud.loc(i);
        for (int d = 0; d < grid_dims_; ++d) cc[d] = floor_div_bucket(l[d], cell_size_);
        grid_[static_cast<int64_t>(mix_cell(cc))].push_back(i);
      }
      break;
    }
    case DistanceKind::kEntityTemporal:
    case DistanceKind::kQueryEntity:
      for (int i = 0; i < n; ++i) {
        if (cloud.entity(i) == kNoEntity)
          throw DataError("NeighborIndex: entity distance over points without ids");
        entities_[cloud.entity(i)].push_back(i);
      }
      break;
    case DistanceKind::kCombined: {
      grid_dims_ = cloud.loc_dim() + 1;
      // Scaled coordinates (l, sqrt(x) * t); cell size targets O(1) points/cell.
      const double ts = std::sqrt(spec_.tradeoff_x);
      std::vector<double> lo(grid_dims_, kInfDist), hi(grid_dims_, -kInfDist);
      for (int i = 0; i < n; ++i) {
        auto l = cloud.loc(i);
        for (int d = 0; d < grid_dims_ - 1; ++d) {
          lo[d] = std::min(lo[d], l[d]);
          hi[d] = std::max(hi[d], l[d]);
        }
        const double st = cloud.time(i) * ts;
        lo[grid_dims_ - 1] = std::min(lo[grid_dims_ - 1], st);
        hi[grid_dims_ - 1] = std::max(hi[grid_dims_ - 1], st);
      }
      double vol = 1.0;
      for (int d = 0; d < grid_dims_; ++d) vol *= std::max(hi[d] - lo[d], 1e-9);
      cell_size_ = std::max(std::pow(vol / std::max(n, 1), 1.0 / grid_dims_), 1e-9);
      std::vector<int64_t> cc(grid_dims_);
      cell_lo_.assign(grid_dims_, 0);
      cell_hi_.assign(grid_dims_, 0);
      for (int i = 0; i < n; ++i) {
        auto l = cloud.loc(i);
        for (int d = 0; d < grid_dims_ - 1; ++d)
          cc[d] = floor_div_bucket(l[d], cell_size_);
        cc[grid_dims_ - 1] = floor_div_bucket(cloud.time(i) * ts, cell_size_);
        for (int d = 0; d < grid_dims_; ++d) {
          if (i == 0) {
            cell_lo_[d] = cell_hi_[d] = cc[d];
          } else {
            cell_lo_[d] = std::min(cell_lo_[d], cc[d]);
            cell_hi_[d] = std::max(cell_hi_[d], cc[d]);
          }
        }
        grid_[static_cast<int64_t>(mix_cell(cc))].push_back(i);
      }
      break;
    }
  }
}

std::vector<int> NeighborIndex::candidates_time_bucket(const Center& c) const {
  std::vector<int> cand;
  const int64_t b = floor_div_bucket(c.t, spec_.eps_t);
  for (int64_t bb = b - 1; bb <= b + 1; ++bb) {
    auto it = time_buckets_.find(bb);
    if (it != time_buckets_.end())
      cand.insert(cand.end(), it->second.begin(), it->second.end());
  }
  return cand;
}

std::vector<int> NeighborIndex::candidates_grid(const Center& c) const {
  // 3^d cells around the center cover every point within eps_s.
  std::vector<int> cand;
  std::vector<int64_t> base(grid_dims_), cur(grid_dims_);
  for (int d = 0; d < grid_dims_; ++d)
    base[d] = floor_div_bucket(c.loc[d], cell_size_);
  std::vector<int> digit(grid_dims_, -1);
  while (true) {
    for (int d = 0; d < grid_dims_; ++d) cur[d] = base[d] + digit[d];
    auto it = grid_.find(static_cast<int64_t>(mix_cell(cur)));
    if (it != grid_.end())
      cand.insert(cand.end(), it->second.begin(), it->second.end());
    int d = 0;
    for (; d < grid_dims_; ++d) {
      if (++digit[d] <= 1) break;
      digit[d] = -1;
    }
    if (d == grid_dims_) break;
  }
  return cand;
}

std::vector<int> NeighborIndex::candidates_entity(const Center& c) const {
  if (c.entity == kNoEntity)
    throw DataError("NeighborIndex: query center lacks an entity id");
  auto it = entities_.find(c.entity);
  if (it == entities_.end()) return {};
  return it->second;
}

std::vector<int> NeighborIndex::query_combined(const Center& c) const {
  const double ts = std::sqrt(spec_.tradeoff_x);
  std::vector<double> sc(grid_dims_);
  for (int d = 0; d < grid_dims_ - 1; ++d) sc[d] = c.loc[d];
  sc[grid_dims_ - 1] = c.t * ts;
  std::vector<int64_t> base(grid_dims_), cur(grid_dims_);
  for (int d = 0; d < grid_dims_; ++d) base[d] = floor_div_bucket(sc[d], cell_size_);

  std::vector<int> cand;
  std::set<int64_t> visited;
  std::vector<std::pair<double, int>> best;  // sorted (distance, index)

  auto scan_cell = [&](std::span<const int64_t> coords) {
    const int64_t key = static_cast<int64_t>(mix_cell(coords));
    if (!visited.insert(key).second) return;
    auto it = grid_.find(key);
    if (it == grid_.end()) return;
    for (int j : it->second) {
      const double d = distance(spec_, cloud_, j, c);
      best.emplace_back(d, j);
    }
  };

  // Expanding Chebyshev rings in cell space. A point in ring m is at least
  // (m-1)*cell_size away, which certifies the current top-k once exceeded.
  for (int64_t r = 0;; ++r) {
    if (r == 0) {
      scan_cell(base);
    } else {
      // Enumerate cells with Chebyshev radius exactly r, skipping the
      // unoccupied exterior of the grid.
      std::vector<int64_t> digit(grid_dims_, -r);
      while (true) {
        int64_t cheb = 0;
        for (int d = 0; d < grid_dims_; ++d)
          cheb = std::max(cheb, digit[d] < 0 ? -digit[d] : digit[d]);
        if (cheb == r) {
          bool inside = true;
          for (int d = 0; d < grid_dims_; ++d) {
            cur[d] = base[d] + digit[d];
            if (cur[d] < cell_lo_[d] || cur[d] > cell_hi_[d]) inside = false;
          }
          if (inside) scan_cell(cur);
        }
        int d = 0;
        for (; d < grid_dims_; ++d) {
          if (++digit[d] <= r) break;
          digit[d] = -r;
        }
        if (d == grid_dims_) break;
      }
    }
    std::sort(best.begin(), best.end());
    if (best.size() > static_cast<size_t>(spec_.k) * 4)
      best.resize(spec_.k * 2);  // safety margin beyond k for tie handling
    const bool full = best.size() >= static_cast<size_t>(spec_.k);
    const double kth = full ? best[spec_.k - 1].first : kInfDist;
    if (full && static_cast<double>(r) * cell_size_ > kth) break;
    bool box_covered = true;
    for (int d = 0; d < grid_dims_; ++d)
      if (base[d] - r > cell_lo_[d] || base[d] + r < cell_hi_[d]) box_covered = false;
    if (box_covered) break;
  }
  cand.reserve(best.size());
  for (auto& [d, j] : best) cand.push_back(j);
  return select_k(cloud_, c, spec_, std::move(cand));
}

std::vector<int> NeighborIndex::query(const Center& c) const {
  switch (spec_.kind) {
    case DistanceKind::kSpatial:
    case DistanceKind::kQuerySpatial:
      return select_k(cloud_, c, spec_, candidates_time_bucket(c));
    case DistanceKind::kTemporal:
      return select_k(cloud_, c, spec_, candidates_grid(c));
    case DistanceKind::kEntityTemporal:
    case DistanceKind::kQueryEntity:
      return select_k(cloud_, c, spec_, candidates_entity(c));
    case DistanceKind::kCombined:
      return query_combined(c);
  }
  return {};
}

int CenterList::size() const {
  return queries ? static_cast<int>(queries->size()) : cloud->size();
}

Center CenterList::center(int i) const {
  if (queries) {
    const QueryPoint& q = (*queries)[i];
    return Center{std::span<const double>(q.loc.data(), q.loc.size()), q.t, q.entity};
  }
  return Center{cloud->loc(i), cloud->time(i), cloud->entity(i)};
}

Neighborhoods gather_neighborhoods(const PointCloud& cloud, const CenterList& centers,
                                   const DistanceSpec& spec, const NeighborIndex* index,
                                   bool parallel) {
  spec.validate();
  const int nc = centers.size();
  std::vector<std::vector<int>> lists(nc);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16) if (parallel && nc > 32)
#endif
  for (int i = 0; i < nc; ++i) {
    const Center c = centers.center(i);
    lists[i] = index ? index->query(c) : k_nearest(cloud, c, spec);
  }

  Neighborhoods out;
  out.center_count = nc;
  out.d_in = spec.delta_dim(cloud.loc_dim());
  out.offsets.resize(nc + 1);
  out.offsets[0] = 0;
  for (int i = 0; i < nc; ++i)
    out.offsets[i + 1] = out.offsets[i] + static_cast<int>(lists[i].size());
  out.idx.reserve(out.offsets[nc]);
  for (auto& l : lists) out.idx.insert(out.idx.end(), l.begin(), l.end());
  out.delta.resize(static_cast<size_t>(out.offsets[nc]) * out.d_in);
  for (int ci = 0; ci < nc; ++ci) {
    const Center c = centers.center(ci);
    for (int p = out.offsets[ci]; p < out.offsets[ci + 1]; ++p) {
      positional_difference(spec, cloud, out.idx[p], c,
                            {out.delta.data() + static_cast<size_t>(p) * out.d_in,
                             static_cast<size_t>(out.d_in)});
    }
  }
  return out;
}

}  // namespace tpc
