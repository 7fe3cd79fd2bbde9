#include "tpc/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

namespace tpc {

namespace {

using nlohmann::json;

json sizes_to_json(const ModelSizes& s) {
  return json{{"latent", s.latent},
              {"encoder_hidden", s.encoder_hidden},
              {"weight_hidden", s.weight_hidden},
              {"c_mid", s.c_mid},
              {"query_latent", s.query_latent},
              {"decoder_hidden", s.decoder_hidden},
              {"ds_phi_hidden", s.ds_phi_hidden},
              {"ds_latent", s.ds_latent},
              {"ds_rho_hidden", s.ds_rho_hidden}};
}

ModelSizes sizes_from_json(const json& j) {
  ModelSizes s;
  s.latent = j.at("latent").get<std::vector<int>>();
  s.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
  s.weight_hidden = j.at("weight_hidden").get<std::vector<int>>();
  s.c_mid = j.at("c_mid").get<int>();
  s.query_latent = j.at("query_latent").get<int>();
  s.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
  s.ds_phi_hidden = j.at("ds_phi_hidden").get<std::vector<int>>();
  s.ds_latent = j.at("ds_latent").get<int>();
  s.ds_rho_hidden = j.at("ds_rho_hidden").get<std::vector<int>>();
  return s;
}

json config_to_jsonv(const ModelConfig& c) {
  return json{
      {"baseline", c.baseline == BaselineKind::kPointConv ? "pointconv" : "deepsets"},
      {"temporal",
       c.temporal == TemporalKind::kSpatialWindow ? "spatial_window" : "entity"},
      {"query", c.query == QueryKind::kSpatial ? "spatial" : "entity"},
      {"combined", c.combined},
      {"combined_x", c.combined_x},
      {"eps_t", c.eps_t},
      {"eps_s", c.eps_s},
      {"k", c.k},
      {"spatial_delta_includes_time", c.spatial_delta_includes_time},
      {"feature_dim", c.feature_dim},
      {"target_dim", c.target_dim},
      {"loc_dim", c.loc_dim},
      {"sizes", sizes_to_json(c.sizes)}};
}

ModelConfig config_from_jsonv(const json& j) {
  ModelConfig c;
  const std::string baseline = j.at("baseline").get<std::string>();
  if (baseline == "pointconv") {
    c.baseline = BaselineKind::kPointConv;
  } else if (baseline == "deepsets") {
    c.baseline = BaselineKind::kDeepSets;
  } else {
    throw ConfigError("model config: unknown baseline '" + baseline + "'");
  }
  const std::string temporal = j.at("temporal").get<std::string>();
  if (temporal == "spatial_window") {
    c.temporal = TemporalKind::kSpatialWindow;
  } else if (temporal == "entity") {
    c.temporal = TemporalKind::kEntity;
  } else {
    throw ConfigError("model config: unknown temporal kind '" + temporal + "'");
  }
  const std::string query = j.at("query").get<std::string>();
  if (query == "spatial") {
    c.query = QueryKind::kSpatial;
  } else if (query == "entity") {
    c.query = QueryKind::kEntity;
  } else {
    throw ConfigError("model config: unknown query kind '" + query + "'");
  }
  c.combined = j.at("combined").get<bool>();
  c.combined_x = j.at("combined_x").get<double>();
  c.eps_t = j.at("eps_t").get<double>();
  c.eps_s = j.at("eps_s").get<double>();
  c.k = j.at("k").get<int>();
  c.spatial_delta_includes_time = j.at("spatial_delta_includes_time").get<bool>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.target_dim = j.at("target_dim").get<int>();
  c.loc_dim = j.at("loc_dim").get<int>();
  c.sizes = sizes_from_json(j.at("sizes"));
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  return config_to_jsonv(cfg).dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  return config_from_jsonv(json::parse(text));
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  json j;
  j["schema"] = "tpc-checkpoint-v1";
  j["task"] = ck.task == Task::kWeather ? "weather" : "entity";
  j["orient_bins"] = ck.orient_bins;
  j["seed"] = ck.seed;
  j["config_hash"] = ck.config_hash;
  j["config"] = config_to_jsonv(ck.model.config);
  j["stats"] = {{"p10", ck.stats.p10},
                {"p90", ck.stats.p90},
                {"degenerate", ck.stats.degenerate}};
  ParamSet ps;
  const_cast<ModelParams&>(ck.model).collect(ps);
  json params = json::object();
  for (int i = 0; i < ps.count(); ++i) {
    const Tensor* t = ps.tensor(i);
    params[ps.name(i)] = {{"rows", t->rows}, {"cols", t->cols}, {"values", t->v}};
  }
  j["params"] = std::move(params);

  std::ofstream f(path);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  f << j.dump();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw IoError("load_checkpoint: parse error in " + path + ": " + e.what());
  }
  if (j.at("schema").get<std::string>() != "tpc-checkpoint-v1")
    throw IoError("load_checkpoint: unsupported schema");

  Checkpoint ck;
  ck.task = j.at("task").get<std::string>() == "weather" ? Task::kWeather
                                                         : Task::kEntity;
  ck.orient_bins = j.at("orient_bins").get<int>();
  ck.seed = j.at("seed").get<uint64_t>();
  ck.config_hash = j.at("config_hash").get<std::string>();
  const ModelConfig cfg = config_from_jsonv(j.at("config"));
  Rng scratch(0);
  ck.model = init_model(cfg, scratch);
  ck.stats.p10 = j.at("stats").at("p10").get<std::vector<double>>();
  ck.stats.p90 = j.at("stats").at("p90").get<std::vector<double>>();
  ck.stats.degenerate = j.at("stats").at("degenerate").get<std::vector<uint8_t>>();

  ParamSet ps;
  ck.model.collect(ps);
  const json& params = j.at("params");
  for (int i = 0; i < ps.count(); ++i) {
    const auto it = params.find(ps.name(i));
    if (it == params.end())
      throw IoError("load_checkpoint: missing parameter " + ps.name(i));
    Tensor* t = ps.tensor(i);
    if (it->at("rows").get<int>() != t->rows || it->at("cols").get<int>() != t->cols)
      throw IoError("load_checkpoint: shape mismatch for " + ps.name(i));
    t->v = it->at("values").get<std::vector<double>>();
  }
  if (params.size() != static_cast<size_t>(ps.count()))
    throw IoError("load_checkpoint: unexpected extra parameters in file");
  return ck;
}

}  // namespace tpc
