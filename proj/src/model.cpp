#include "tpc/model.hpp"

namespace tpc {

DistanceSpec ModelConfig::spatial_spec() const {
  if (combined)
    return combined_spec();
  return DistanceSpec{DistanceKind::kSpatial, eps_t, 0.0, 1.0, k};
}

DistanceSpec ModelConfig::temporal_spec() const {
  if (temporal == TemporalKind::kEntity)
    return DistanceSpec{DistanceKind::kEntityTemporal, 0.0, 0.0, 1.0, k};
  return DistanceSpec{DistanceKind::kTemporal, 0.0, eps_s, 1.0, k};
}

DistanceSpec ModelConfig::combined_spec() const {
  return DistanceSpec{DistanceKind::kCombined, 0.0, 0.0, combined_x, k};
}

DistanceSpec ModelConfig::query_spec() const {
  if (query == QueryKind::kEntity)
    return DistanceSpec{DistanceKind::kQueryEntity, 0.0, 0.0, 1.0, k};
  return DistanceSpec{DistanceKind::kQuerySpatial, eps_t, 0.0, 1.0, k};
}

void ModelConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("ModelConfig: feature_dim must be >= 1");
  if (target_dim < 1) throw ConfigError("ModelConfig: target_dim must be >= 1");
  if (sizes.latent.empty()) throw ConfigError("ModelConfig: at least one layer");
  if (sizes.latent.size() != sizes.encoder_hidden.size())
    throw ConfigError("ModelConfig: latent and encoder_hidden lengths differ");
  spatial_spec().validate();
  if (!combined) temporal_spec().validate();
  query_spec().validate();
}

int ConvSite::c_out() const {
  if (auto* pc = std::get_if<PointConvParams>(&impl)) return pc->c_out;
  return std::get<DeepSetsParams>(impl).c_out;
}

void ConvSite::collect(ParamSet& ps, const std::string& prefix) {
  if (auto* pc = std::get_if<PointConvParams>(&impl)) {
    pc->collect(ps, prefix);
  } else {
    std::get<DeepSetsParams>(impl).collect(ps, prefix);
  }
}

void ModelParams::collect(ParamSet& ps) {
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i);
    layers[i].spatial.collect(ps, p + ".spatial");
    if (layers[i].temporal) layers[i].temporal->collect(ps, p + ".temporal");
    layers[i].combine.collect(ps, p + ".f");
  }
  query.collect(ps, "query");
  decoder.collect(ps, "decoder");
}

namespace {

ConvSite make_site(const ModelConfig& cfg, int d_in, int c_in, int c_out, Rng& rng) {
  ConvSite site;
  if (cfg.baseline == BaselineKind::kPointConv) {
    site.impl = PointConvParams::create(d_in, cfg.sizes.weight_hidden, cfg.sizes.c_mid,
                                        c_in, c_out, rng);
  } else {
    site.impl = DeepSetsParams::create(cfg.loc_dim, c_in, cfg.sizes.ds_phi_hidden,
                                       cfg.sizes.ds_latent, cfg.sizes.ds_rho_hidden,
                                       c_out, rng);
  }
  return site;
}

Var apply_conv(Tape& tape, Var features, const Neighborhoods& nbh,
               const PointCloud& cloud, ConvSite& site) {
  if (auto* pc = std::get_if<PointConvParams>(&site.impl))
    return pointconv_efficient(tape, features, nbh, *pc);
  return deepsets_aggregate(tape, features, nbh, cloud, std::get<DeepSetsParams>(site.impl));
}

// Extends spatial deltas with the in-window time offset when configured.
void append_time_delta(Neighborhoods& nbh, const PointCloud& cloud,
                       const CenterList& centers) {
  const int d_old = nbh.d_in;
  std::vector<double> delta(static_cast<size_t>(nbh.total()) * (d_old + 1));
  for (int c = 0; c < nbh.center_count; ++c) {
    const Center ctr = centers.center(c);
    for (int e = nbh.offsets[c]; e < nbh.offsets[c + 1]; ++e) {
      for (int d = 0; d < d_old; ++d)
        delta[static_cast<size_t>(e) * (d_old + 1) + d] =
            nbh.delta[static_cast<size_t>(e) * d_old + d];
      delta[static_cast<size_t>(e) * (d_old + 1) + d_old] =
          cloud.time(nbh.idx[e]) - ctr.t;
    }
  }
  nbh.delta = std::move(delta);
  nbh.d_in = d_old + 1;
}

}  // namespace

ModelParams init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams m;
  m.config = config;
  const int ld = config.loc_dim;
  const int spatial_d_in =
      config.combined ? ld + 1 : (config.spatial_delta_includes_time ? ld + 1 : ld);

  int f_in = config.feature_dim;
  for (size_t i = 0; i < config.sizes.latent.size(); ++i) {
    TpcLayerParams layer;
    layer.f_in = f_in;
    const int latent = config.sizes.latent[i];
    if (config.combined) {
      layer.f_s = latent;
      layer.f_t = 0;
      layer.spatial = make_site(config, spatial_d_in, f_in, latent, rng);
    } else {
      layer.f_s = latent;
      layer.f_t = latent;
      layer.spatial = make_site(config, spatial_d_in, f_in, latent, rng);
      layer.temporal = make_site(config, 1, f_in + latent, latent, rng);
    }
    layer.f_out = latent;
    const int f_cat = layer.f_in + layer.f_s + layer.f_t;
    layer.combine = Mlp::create(f_cat, {config.sizes.encoder_hidden[i]},
                                layer.f_out, rng);
    m.layers.push_back(std::move(layer));
    f_in = latent;
  }

  const int query_d_in = config.query == QueryKind::kEntity ? 1 : ld;
  m.query = make_site(config, query_d_in, f_in, config.sizes.query_latent, rng);
  m.decoder = Mlp::create(config.sizes.query_latent, config.sizes.decoder_hidden,
                          config.target_dim, rng);
  return m;
}

CloudGeometry build_geometry(const PointCloud& cloud, const QuerySet& queries,
                             const ModelConfig& config, bool parallel) {
  CloudGeometry g;
  const CenterList self{&cloud, nullptr};
  const CenterList qc{&cloud, &queries};
  const bool use_index = cloud.size() >= 64;

  const DistanceSpec sspec = config.spatial_spec();
  std::optional<NeighborIndex> sindex;
  if (use_index) sindex.emplace(cloud, sspec);
  g.spatial = gather_neighborhoods(cloud, self, sspec,
                                   sindex ? &*sindex : nullptr, parallel);
  if (!config.combined && config.spatial_delta_includes_time)
    append_time_delta(g.spatial, cloud, self);

  if (!config.combined) {
    const DistanceSpec tspec = config.temporal_spec();
    std::optional<NeighborIndex> tindex;
    if (use_index) tindex.emplace(cloud, tspec);
    g.temporal = gather_neighborhoods(cloud, self, tspec,
                                      tindex ? &*tindex : nullptr, parallel);
  }

  const DistanceSpec qspec = config.query_spec();
  std::optional<NeighborIndex> qindex;
  if (use_index) qindex.emplace(cloud, qspec);
  g.query = gather_neighborhoods(cloud, qc, qspec, qindex ? &*qindex : nullptr,
                                 parallel);
  return g;
}

Var tpc_layer(Tape& tape, Var features, const PointCloud& cloud,
              const CloudGeometry& geom, TpcLayerParams& layer,
              const ModelConfig& config) {
  if (tape.cols(features) != layer.f_in)
    throw ShapeError("tpc_layer", {{tape.rows(features), tape.cols(features)}},
                     "feature dim != layer input dim");
  if (config.combined) {
    Var o_c = apply_conv(tape, features, geom.spatial, cloud, layer.spatial);
    Var h = tape.concat_cols({features, o_c});
    return layer.combine.apply(tape, h);
  }
  Var o_s = apply_conv(tape, features, geom.spatial, cloud, layer.spatial);
  Var p_res = tape.concat_cols({features, o_s});
  Var o_t = apply_conv(tape, p_res, geom.temporal, cloud, *layer.temporal);
  Var h = tape.concat_cols({features, o_s, o_t});
  return layer.combine.apply(tape, h);
}

Var model_forward(Tape& tape, ModelParams& model, const PointCloud& cloud,
                  const CloudGeometry& geom) {
  if (cloud.size() == 0) throw DataError("model_forward: empty input cloud");
  Var x = tape.input(cloud.size(), cloud.feat_dim(),
                     std::vector<double>(cloud.feat_matrix().begin(),
                                         cloud.feat_matrix().end()));
  for (auto& layer : model.layers)
    x = tpc_layer(tape, x, cloud, geom, layer, model.config);
  Var y = apply_conv(tape, x, geom.query, cloud, model.query);
  return model.decoder.apply(tape, y);
}

std::vector<double> predict(ModelParams& model, const PointCloud& cloud,
                            const QuerySet& queries, Precision precision) {
  const CloudGeometry geom = build_geometry(cloud, queries, model.config);
  Tape tape(precision);
  const Var out = model_forward(tape, model, cloud, geom);
  auto v = tape.value(out);
  return {v.begin(), v.end()};
}

}  // namespace tpc
