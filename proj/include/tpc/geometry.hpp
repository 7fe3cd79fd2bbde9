#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "tpc/error.hpp"

namespace tpc {

inline constexpr int64_t kNoEntity = -1;
inline constexpr double kInfDist = std::numeric_limits<double>::infinity();

// One spatio-temporal sample: location, time, optional entity id, features.
struct STPoint {
  std::vector<double> loc;
  double t = 0.0;
  int64_t entity = kNoEntity;
  std::vector<double> feat;
};

struct QueryPoint {
  std::vector<double> loc;
  double t = 0.0;
  int64_t entity = kNoEntity;
};

using QuerySet = std::vector<QueryPoint>;

// Column-contiguous storage for a set of points. Point order is stable; all
// indices returned by neighbor searches refer to this order.
class PointCloud {
 public:
  PointCloud() = default;
  PointCloud(int loc_dim, int feat_dim) : loc_dim_(loc_dim), feat_dim_(feat_dim) {}

  void add(const STPoint& p);
  void reserve(int n);

  int size() const { return static_cast<int>(t_.size()); }
  int loc_dim() const { return loc_dim_; }
  int feat_dim() const { return feat_dim_; }

  std::span<const double> loc(int i) const {
    return {loc_.data() + static_cast<size_t>(i) * loc_dim_,
            static_cast<size_t>(loc_dim_)};
  }
  double time(int i) const { return t_[i]; }
  int64_t entity(int i) const { return entity_[i]; }
  std::span<const double> feat(int i) const {
    return {feat_.data() + static_cast<size_t>(i) * feat_dim_,
            static_cast<size_t>(feat_dim_)};
  }
  STPoint point(int i) const;

  const std::vector<double>& feat_matrix() const { return feat_; }
  std::vector<double>& mutable_feat_matrix() { return feat_; }
  // Replaces all features; new_dim columns per point.
  void set_feat_matrix(std::vector<double> values, int new_dim);

 private:
  int loc_dim_ = 2;
  int feat_dim_ = 0;
  std::vector<double> loc_;
  std::vector<double> t_;
  std::vector<int64_t> entity_;
  std::vector<double> feat_;
};

enum class DistanceKind {
  kSpatial,         // ||dl|| within a time window, else infinite
  kTemporal,        // |dt| within a space window, else infinite
  kEntityTemporal,  // |dt| for matching entity ids, else infinite
  kCombined,        // sqrt(Ds^2 + x * Dt^2), always finite
  kQuerySpatial,
  kQueryEntity,
};

const char* distance_kind_name(DistanceKind k);

struct DistanceSpec {
  DistanceKind kind = DistanceKind::kSpatial;
  double eps_t = 0.0;
  double eps_s = 0.0;
  double tradeoff_x = 1.0;
  int k = 8;

  void validate() const;
  // Dimension of the positional-difference vector fed to weight networks.
  int delta_dim(int loc_dim) const;
  bool uses_time_window() const {
    return kind == DistanceKind::kSpatial || kind == DistanceKind::kQuerySpatial;
  }
  bool uses_space_window() const { return kind == DistanceKind::kTemporal; }
  bool uses_entity() const {
    return kind == DistanceKind::kEntityTemporal || kind == DistanceKind::kQueryEntity;
  }
};

// Lightweight view of a neighborhood center (a cloud point or a query point).
struct Center {
  std::span<const double> loc;
  double t = 0.0;
  int64_t entity = kNoEntity;
};

double euclidean(std::span<const double> a, std::span<const double> b);

double d_spatial(const STPoint& a, const STPoint& b, double eps_t);
double d_temporal(const STPoint& a, const STPoint& b, double eps_s);
double d_entity(const STPoint& a, const STPoint& b);
double d_combined(const STPoint& a, const STPoint& b, double x);

// Distance from cloud point j to a center under the given spec.
double distance(const DistanceSpec& spec, const PointCloud& cloud, int j,
                const Center& c);

// Positional difference delta(p_i, p_0) for the spec kind: spatial kinds use
// the location offset, temporal/entity kinds the time offset, combined both.
void positional_difference(const DistanceSpec& spec, const PointCloud& cloud, int i,
                           const Center& c, std::span<double> out);

// Reference k-nearest-neighbor search: full scan, ascending by (distance,
// index), infinite distances excluded. Kept as the oracle for the index.
std::vector<int> k_nearest(const PointCloud& cloud, const Center& c,
                           const DistanceSpec& spec);

// Bucket/grid accelerator. Immutable after construction; concurrent query()
// calls are safe. Results are identical to k_nearest, including tie order.
class NeighborIndex {
 public:
  NeighborIndex(const PointCloud& cloud, const DistanceSpec& spec);
  std::vector<int> query(const Center& c) const;

 private:
  std::vector<int> candidates_time_bucket(const Center& c) const;
  std::vector<int> candidates_grid(const Center& c) const;
  std::vector<int> candidates_entity(const Center& c) const;
  std::vector<int> select(const Center& c, std::span<const int> candidates) const;
  std::vector<int> query_combined(const Center& c) const;
  int64_t cell_of(std::span<const double> coords) const;

  const PointCloud& cloud_;
  DistanceSpec spec_;
  // time buckets (spatial kinds)
  std::unordered_map<int64_t, std::vector<int>> time_buckets_;
  // spatial grid (temporal kind) and scaled grid (combined kind)
  std::unordered_map<int64_t, std::vector<int>> grid_;
  std::vector<int64_t> cell_lo_, cell_hi_;  // occupied cell bounds (combined kind)
  double cell_size_ = 1.0;
  int grid_dims_ = 0;
  // entity map
  std::unordered_map<int64_t, std::vector<int>> entities_;
};

// Flattened neighbor lists for a batch of centers plus the positional
// differences the weight networks consume.
struct Neighborhoods {
  std::vector<int> idx;      // concatenated neighbor indices
  std::vector<int> offsets;  // centers + 1 entries
  std::vector<double> delta; // (total neighbors) x d_in
  int d_in = 0;
  int center_count = 0;
  int total() const { return static_cast<int>(idx.size()); }
  bool empty_center(int c) const { return offsets[c] == offsets[c + 1]; }
};

struct CenterList {
  // Either refers to the cloud itself (self convolution) or to a query set.
  const PointCloud* cloud = nullptr;
  const QuerySet* queries = nullptr;
  int size() const;
  Center center(int i) const;
};

// Runs k-NN for every center (OpenMP across centers when parallel is true)
// and assembles neighbor indices, offsets and deltas. When `index` is null a
// brute-force scan is used; results are identical either way.
Neighborhoods gather_neighborhoods(const PointCloud& cloud, const CenterList& centers,
                                   const DistanceSpec& spec,
                                   const NeighborIndex* index = nullptr,
                                   bool parallel = true);

}  // namespace tpc
