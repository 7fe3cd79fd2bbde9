#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tpc/pointconv.hpp"

namespace tpc {

enum class BaselineKind { kPointConv, kDeepSets };
enum class TemporalKind { kSpatialWindow, kEntity };
enum class QueryKind { kSpatial, kEntity };

struct ModelSizes {
  std::vector<int> latent{16, 32, 32};          // per-layer conv output dims
  std::vector<int> encoder_hidden{32, 64, 64};  // per-layer combine-MLP hidden width
  std::vector<int> weight_hidden{16, 16};       // weight-net hidden sizes
  int c_mid = 32;
  int query_latent = 64;
  std::vector<int> decoder_hidden{64, 64, 64};
  // DeepSets substitution sizes.
  std::vector<int> ds_phi_hidden{64, 64};
  int ds_latent = 64;
  std::vector<int> ds_rho_hidden{64};
};

struct ModelConfig {
  BaselineKind baseline = BaselineKind::kPointConv;
  TemporalKind temporal = TemporalKind::kSpatialWindow;
  QueryKind query = QueryKind::kSpatial;
  bool combined = false;      // joint space-time neighborhoods instead of the
  double combined_x = 1.0;    // spatial/temporal split
  double eps_t = 0.75;
  double eps_s = 2.0;
  int k = 8;
  bool spatial_delta_includes_time = false;
  int feature_dim = 0;
  int target_dim = 0;
  int loc_dim = 2;
  ModelSizes sizes;

  DistanceSpec spatial_spec() const;
  DistanceSpec temporal_spec() const;
  DistanceSpec combined_spec() const;
  DistanceSpec query_spec() const;
  void validate() const;
};

// One convolution site, either a PointConv or its DeepSets drop-in.
struct ConvSite {
  std::variant<PointConvParams, DeepSetsParams> impl;
  int c_out() const;
  void collect(ParamSet& ps, const std::string& prefix);
};

struct TpcLayerParams {
  ConvSite spatial;                  // the sole conv when running combined
  std::optional<ConvSite> temporal;  // absent in combined mode
  Mlp combine;                       // f
  int f_in = 0, f_s = 0, f_t = 0, f_out = 0;
};

struct ModelParams {
  ModelConfig config;
  std::vector<TpcLayerParams> layers;
  ConvSite query;
  Mlp decoder;  // g

  void collect(ParamSet& ps);
};

ModelParams init_model(const ModelConfig& config, Rng& rng);

// Neighbor structure shared by every layer of one forward pass. Geometry
// depends only on (cloud, queries, config), never on features.
struct CloudGeometry {
  Neighborhoods spatial;   // combined neighborhoods when config.combined
  Neighborhoods temporal;  // unused in combined mode
  Neighborhoods query;
};

CloudGeometry build_geometry(const PointCloud& cloud, const QuerySet& queries,
                             const ModelConfig& config, bool parallel = false);

// One TemporalPointConv layer: spatial conv, residual concat, temporal conv,
// combine MLP. Returns per-point features (n x f_out).
Var tpc_layer(Tape& tape, Var features, const PointCloud& cloud,
              const CloudGeometry& geom, TpcLayerParams& layer,
              const ModelConfig& config);

// Full forward pass: stacked layers, query conv, decoder. Returns |Q| x
// target_dim predictions.
Var model_forward(Tape& tape, ModelParams& model, const PointCloud& cloud,
                  const CloudGeometry& geom);

// Convenience: plain evaluation without retaining gradients.
std::vector<double> predict(ModelParams& model, const PointCloud& cloud,
                            const QuerySet& queries,
                            Precision precision = Precision::kDouble);

}  // namespace tpc
