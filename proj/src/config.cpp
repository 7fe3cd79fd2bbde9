#include "tpc/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "tpc/checkpoint.hpp"

#include "json.hpp"

namespace tpc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  std::string unknown;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      if (!unknown.empty()) unknown += ", ";
      unknown += it.key();
    }
  }
  if (!unknown.empty())
    throw ConfigError("config: unknown keys in " + where + ": " + unknown);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return it->get<T>();
}

OffsetDistribution parse_dist(const json& j, const std::string& where) {
  check_keys(j, {"kind", "values", "a", "b", "sigma", "count"}, where);
  OffsetDistribution d;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed") {
    d.kind = OffsetKind::kFixed;
    d.values = j.at("values").get<std::vector<double>>();
  } else if (kind == "uniform") {
    d.kind = OffsetKind::kUniform;
    d.a = j.at("a").get<double>();
    d.b = j.at("b").get<double>();
    d.count = j.at("count").get<int>();
  } else if (kind == "half_normal") {
    d.kind = OffsetKind::kHalfNormal;
    d.a = j.at("a").get<double>();
    d.b = j.at("b").get<double>();
    d.sigma = get_or(j, "sigma", 5.0);
    d.count = j.at("count").get<int>();
  } else {
    throw ConfigError("config: unknown offset kind '" + kind + "' in " + where);
  }
  d.validate();
  return d;
}

json dist_to_json(const OffsetDistribution& d) {
  switch (d.kind) {
    case OffsetKind::kFixed:
      return json{{"kind", "fixed"}, {"values", d.values}};
    case OffsetKind::kUniform:
      return json{{"kind", "uniform"}, {"a", d.a}, {"b", d.b}, {"count", d.count}};
    case OffsetKind::kHalfNormal:
      return json{{"kind", "half_normal"}, {"a", d.a}, {"b", d.b},
                  {"sigma", d.sigma}, {"count", d.count}};
  }
  return {};
}

std::vector<NamedDist> default_input_dists() {
  return {
      {"fixed1", {OffsetKind::kFixed, {-7, -4, -2, -1}, 0, 0, 5.0, 0}},
      {"fixed2", {OffsetKind::kFixed, {-10, -8, -6, -4}, 0, 0, 5.0, 0}},
      {"uniform", {OffsetKind::kUniform, {}, -10.0, 0.0, 5.0, 4}},
      {"half_normal", {OffsetKind::kHalfNormal, {}, -10.0, 0.0, 4.0, 4}},
  };
}

std::vector<NamedDist> default_query_dists() {
  return {
      {"fixed1", {OffsetKind::kFixed, {1, 2, 4, 7}, 0, 0, 5.0, 0}},
      {"fixed2", {OffsetKind::kFixed, {8, 10, 12, 14}, 0, 0, 5.0, 0}},
      {"uniform", {OffsetKind::kUniform, {}, 1.0, 15.0, 5.0, 4}},
      {"half_normal", {OffsetKind::kHalfNormal, {}, 1.0, 15.0, 6.0, 4}},
  };
}

}  // namespace

void finalize_model_dims(RunConfig& cfg) {
  if (cfg.task == Task::kWeather) {
    cfg.model.feature_dim = FieldProcessSpec::kAttrs;
    cfg.model.target_dim = FieldProcessSpec::kAttrs;
  } else {
    cfg.model.feature_dim = cfg.data.entity.feature_dim();
    cfg.model.target_dim = 4 + cfg.data.entity.orient_bins + 1;
    cfg.model.temporal = TemporalKind::kEntity;
    cfg.model.query = QueryKind::kEntity;
    cfg.data.dataset.example.orient_bins = cfg.data.entity.orient_bins;
  }
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: JSON parse error: ") + e.what());
  }
  check_keys(j, {"task", "seed", "precision", "out_dir", "data", "model", "train",
                 "experiment"},
             "top level");

  RunConfig cfg;
  const std::string task = j.at("task").get<std::string>();
  if (task == "weather") {
    cfg.task = Task::kWeather;
  } else if (task == "entity") {
    cfg.task = Task::kEntity;
  } else {
    throw ConfigError("config: task must be weather or entity");
  }
  cfg.seed = get_or<uint64_t>(j, "seed", 1);
  const std::string prec = get_or<std::string>(j, "precision", "double");
  if (prec == "double") {
    cfg.precision = Precision::kDouble;
  } else if (prec == "single") {
    cfg.precision = Precision::kSingle;
  } else {
    throw ConfigError("config: precision must be single or double");
  }
  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);

  // Task-dependent defaults before overrides.
  if (cfg.task == Task::kWeather) {
    cfg.data.dataset.history = {OffsetKind::kUniform, {}, -10.0, -1.0, 5.0, 8};
    cfg.data.dataset.query = {OffsetKind::kFixed, {0.0}, 0, 0, 5.0, 0};
  } else {
    cfg.data.dataset.history = {OffsetKind::kUniform, {}, -10.0, -1.0, 5.0, 8};
    cfg.data.dataset.query = {OffsetKind::kFixed, {1, 2, 4, 7}, 0, 0, 5.0, 0};
  }

  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d,
               {"csv_paths", "episodes", "examples_per_episode", "history", "query",
                "target_station_fraction", "match_tolerance", "dropout",
                "test_episodes", "test_examples_per_episode", "field", "entity"},
               "data");
    cfg.data.csv_paths = get_or<std::vector<std::string>>(d, "csv_paths", {});
    cfg.data.dataset.episodes = get_or(d, "episodes", cfg.data.dataset.episodes);
    cfg.data.dataset.examples_per_episode =
        get_or(d, "examples_per_episode", cfg.data.dataset.examples_per_episode);
    if (d.contains("history")) cfg.data.dataset.history = parse_dist(d["history"], "data.history");
    if (d.contains("query")) cfg.data.dataset.query = parse_dist(d["query"], "data.query");
    auto& ex = cfg.data.dataset.example;
    ex.target_station_fraction =
        get_or(d, "target_station_fraction", ex.target_station_fraction);
    ex.match_tolerance = get_or(d, "match_tolerance", ex.match_tolerance);
    ex.dropout = get_or(d, "dropout", ex.dropout);
    cfg.data.test_episodes = get_or(d, "test_episodes", cfg.data.test_episodes);
    cfg.data.test_examples_per_episode =
        get_or(d, "test_examples_per_episode", cfg.data.test_examples_per_episode);
    if (d.contains("field")) {
      const json& f = d["field"];
      check_keys(f,
                 {"stations", "arena", "sources", "speed_min", "speed_max",
                  "width_min", "width_max", "amp_min", "amp_max", "noise_sigma",
                  "report_rate", "bad_fraction", "length"},
                 "data.field");
      auto& fs = cfg.data.field;
      fs.stations = get_or(f, "stations", fs.stations);
      fs.arena = get_or(f, "arena", fs.arena);
      fs.sources = get_or(f, "sources", fs.sources);
      fs.speed_min = get_or(f, "speed_min", fs.speed_min);
      fs.speed_max = get_or(f, "speed_max", fs.speed_max);
      fs.width_min = get_or(f, "width_min", fs.width_min);
      fs.width_max = get_or(f, "width_max", fs.width_max);
      fs.amp_min = get_or(f, "amp_min", fs.amp_min);
      fs.amp_max = get_or(f, "amp_max", fs.amp_max);
      fs.noise_sigma = get_or(f, "noise_sigma", fs.noise_sigma);
      fs.report_rate = get_or(f, "report_rate", fs.report_rate);
      fs.bad_fraction = get_or(f, "bad_fraction", fs.bad_fraction);
      fs.length = get_or(f, "length", fs.length);
      fs.dropout = cfg.data.dataset.example.dropout;
    }
    if (d.contains("entity")) {
      const json& en = d["entity"];
      check_keys(en,
                 {"team_min", "team_max", "unit_types", "arena", "dt", "steps",
                  "damage_radius", "damage_scale", "shield_max", "shield_regen",
                  "direction_change_prob", "pursuit_weight", "orient_bins"},
                 "data.entity");
      auto& es = cfg.data.entity;
      es.team_min = get_or(en, "team_min", es.team_min);
      es.team_max = get_or(en, "team_max", es.team_max);
      es.unit_types = get_or(en, "unit_types", es.unit_types);
      es.arena = get_or(en, "arena", es.arena);
      es.dt = get_or(en, "dt", es.dt);
      es.steps = get_or(en, "steps", es.steps);
      es.damage_radius = get_or(en, "damage_radius", es.damage_radius);
      es.damage_scale = get_or(en, "damage_scale", es.damage_scale);
      es.shield_max = get_or(en, "shield_max", es.shield_max);
      es.shield_regen = get_or(en, "shield_regen", es.shield_regen);
      es.direction_change_prob =
          get_or(en, "direction_change_prob", es.direction_change_prob);
      es.pursuit_weight = get_or(en, "pursuit_weight", es.pursuit_weight);
      es.orient_bins = get_or(en, "orient_bins", es.orient_bins);
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m,
               {"baseline", "temporal", "query", "combined", "combined_x", "eps_t",
                "eps_s", "k", "spatial_delta_includes_time", "latent",
                "encoder_hidden", "weight_hidden", "c_mid", "query_latent",
                "decoder_hidden", "ds_phi_hidden", "ds_latent", "ds_rho_hidden"},
               "model");
    auto& mc = cfg.model;
    const std::string baseline = get_or<std::string>(m, "baseline", "pointconv");
    if (baseline == "pointconv") {
      mc.baseline = BaselineKind::kPointConv;
    } else if (baseline == "deepsets") {
      mc.baseline = BaselineKind::kDeepSets;
    } else {
      throw ConfigError("config: model.baseline must be pointconv or deepsets");
    }
    const std::string temporal =
        get_or<std::string>(m, "temporal",
                            cfg.task == Task::kEntity ? "entity" : "spatial_window");
    if (temporal == "spatial_window") {
      mc.temporal = TemporalKind::kSpatialWindow;
    } else if (temporal == "entity") {
      mc.temporal = TemporalKind::kEntity;
    } else {
      throw ConfigError("config: model.temporal must be spatial_window or entity");
    }
    const std::string query = get_or<std::string>(
        m, "query", cfg.task == Task::kEntity ? "entity" : "spatial");
    if (query == "spatial") {
      mc.query = QueryKind::kSpatial;
    } else if (query == "entity") {
      mc.query = QueryKind::kEntity;
    } else {
      throw ConfigError("config: model.query must be spatial or entity");
    }
    mc.combined = get_or(m, "combined", false);
    mc.combined_x = get_or(m, "combined_x", 1.0);
    mc.eps_t = get_or(m, "eps_t", mc.eps_t);
    if (m.contains("eps_s")) {
      if (m["eps_s"].is_string()) {
        if (m["eps_s"].get<std::string>() != "auto")
          throw ConfigError("config: model.eps_s must be a number or \"auto\"");
        cfg.eps_s_auto = true;
      } else {
        cfg.eps_s_auto = false;
        mc.eps_s = m["eps_s"].get<double>();
      }
    }
    mc.k = get_or(m, "k", mc.k);
    mc.spatial_delta_includes_time =
        get_or(m, "spatial_delta_includes_time", false);
    auto& s = mc.sizes;
    s.latent = get_or(m, "latent", s.latent);
    s.encoder_hidden = get_or(m, "encoder_hidden", s.encoder_hidden);
    s.weight_hidden = get_or(m, "weight_hidden", s.weight_hidden);
    s.c_mid = get_or(m, "c_mid", s.c_mid);
    s.query_latent = get_or(m, "query_latent", s.query_latent);
    s.decoder_hidden = get_or(m, "decoder_hidden", s.decoder_hidden);
    s.ds_phi_hidden = get_or(m, "ds_phi_hidden", s.ds_phi_hidden);
    s.ds_latent = get_or(m, "ds_latent", s.ds_latent);
    s.ds_rho_hidden = get_or(m, "ds_rho_hidden", s.ds_rho_hidden);
  } else if (cfg.task == Task::kEntity) {
    cfg.model.temporal = TemporalKind::kEntity;
    cfg.model.query = QueryKind::kEntity;
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"epochs", "batch", "lr_max", "lr_min", "cycles", "val_fraction",
                "evals_per_epoch", "max_val_examples"},
               "train");
    auto& tc = cfg.train;
    tc.epochs = get_or(t, "epochs", tc.epochs);
    tc.batch = get_or(t, "batch", tc.batch);
    tc.lr_max = get_or(t, "lr_max", tc.lr_max);
    tc.lr_min = get_or(t, "lr_min", tc.lr_min);
    tc.cycles = get_or(t, "cycles", tc.cycles);
    tc.val_fraction = get_or(t, "val_fraction", tc.val_fraction);
    tc.evals_per_epoch = get_or(t, "evals_per_epoch", tc.evals_per_epoch);
    tc.max_val_examples = get_or(t, "max_val_examples", tc.max_val_examples);
  }
  cfg.train.seed = cfg.seed;
  cfg.train.precision = cfg.precision;

  cfg.experiment.input_dists = default_input_dists();
  cfg.experiment.query_dists = default_query_dists();
  if (j.contains("experiment")) {
    const json& e = j["experiment"];
    check_keys(e,
               {"input_dists", "query_dists", "ablate_x", "grid_mode",
                "query_offset_max", "anomaly"},
               "experiment");
    auto parse_named = [&](const json& arr, const std::string& where) {
      std::vector<NamedDist> out;
      for (size_t i = 0; i < arr.size(); ++i) {
        const json& nd = arr[i];
        check_keys(nd, {"name", "kind", "values", "a", "b", "sigma", "count"}, where);
        NamedDist d;
        d.name = nd.at("name").get<std::string>();
        json inner = nd;
        inner.erase("name");
        d.dist = parse_dist(inner, where + "." + d.name);
        out.push_back(std::move(d));
      }
      return out;
    };
    if (e.contains("input_dists"))
      cfg.experiment.input_dists = parse_named(e["input_dists"], "experiment.input_dists");
    if (e.contains("query_dists"))
      cfg.experiment.query_dists = parse_named(e["query_dists"], "experiment.query_dists");
    cfg.experiment.ablate_x =
        get_or(e, "ablate_x", cfg.experiment.ablate_x);
    cfg.experiment.grid_mode = get_or<std::string>(e, "grid_mode", "input");
    if (cfg.experiment.grid_mode != "input" && cfg.experiment.grid_mode != "query" &&
        cfg.experiment.grid_mode != "both")
      throw ConfigError("config: experiment.grid_mode must be input, query or both");
    cfg.experiment.query_offset_max =
        get_or(e, "query_offset_max", cfg.experiment.query_offset_max);
    if (e.contains("anomaly")) {
      const json& a = e["anomaly"];
      check_keys(a,
                 {"station_fraction", "magnitude", "corrupt_context",
                  "history_window", "seed"},
                 "experiment.anomaly");
      auto& ac = cfg.experiment.anomaly;
      ac.station_fraction = get_or(a, "station_fraction", ac.station_fraction);
      ac.magnitude = get_or(a, "magnitude", ac.magnitude);
      ac.corrupt_context = get_or(a, "corrupt_context", ac.corrupt_context);
      ac.history_window = get_or(a, "history_window", ac.history_window);
      ac.seed = get_or<uint64_t>(a, "seed", ac.seed);
    }
  }

  finalize_model_dims(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["task"] = cfg.task == Task::kWeather ? "weather" : "entity";
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision == Precision::kDouble ? "double" : "single";
  j["out_dir"] = cfg.out_dir;
  j["data"] = {
      {"csv_paths", cfg.data.csv_paths},
      {"episodes", cfg.data.dataset.episodes},
      {"examples_per_episode", cfg.data.dataset.examples_per_episode},
      {"history", dist_to_json(cfg.data.dataset.history)},
      {"query", dist_to_json(cfg.data.dataset.query)},
      {"target_station_fraction", cfg.data.dataset.example.target_station_fraction},
      {"match_tolerance", cfg.data.dataset.example.match_tolerance},
      {"dropout", cfg.data.dataset.example.dropout},
      {"test_episodes", cfg.data.test_episodes},
      {"test_examples_per_episode", cfg.data.test_examples_per_episode},
      {"field",
       {{"stations", cfg.data.field.stations},
        {"arena", cfg.data.field.arena},
        {"sources", cfg.data.field.sources},
        {"speed_min", cfg.data.field.speed_min},
        {"speed_max", cfg.data.field.speed_max},
        {"width_min", cfg.data.field.width_min},
        {"width_max", cfg.data.field.width_max},
        {"amp_min", cfg.data.field.amp_min},
        {"amp_max", cfg.data.field.amp_max},
        {"noise_sigma", cfg.data.field.noise_sigma},
        {"report_rate", cfg.data.field.report_rate},
        {"bad_fraction", cfg.data.field.bad_fraction},
        {"length", cfg.data.field.length}}},
      {"entity",
       {{"team_min", cfg.data.entity.team_min},
        {"team_max", cfg.data.entity.team_max},
        {"unit_types", cfg.data.entity.unit_types},
        {"arena", cfg.data.entity.arena},
        {"dt", cfg.data.entity.dt},
        {"steps", cfg.data.entity.steps},
        {"damage_radius", cfg.data.entity.damage_radius},
        {"damage_scale", cfg.data.entity.damage_scale},
        {"shield_max", cfg.data.entity.shield_max},
        {"shield_regen", cfg.data.entity.shield_regen},
        {"direction_change_prob", cfg.data.entity.direction_change_prob},
        {"pursuit_weight", cfg.data.entity.pursuit_weight},
        {"orient_bins", cfg.data.entity.orient_bins}}}};
  json grids = json::array();
  for (const auto& d : cfg.experiment.input_dists) {
    json nd = dist_to_json(d.dist);
    nd["name"] = d.name;
    grids.push_back(nd);
  }
  json qgrids = json::array();
  for (const auto& d : cfg.experiment.query_dists) {
    json nd = dist_to_json(d.dist);
    nd["name"] = d.name;
    qgrids.push_back(nd);
  }
  j["model"] = nlohmann::json::parse(model_config_to_json(cfg.model));
  j["model"]["eps_s_auto"] = cfg.eps_s_auto;
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch", cfg.train.batch},
                {"lr_max", cfg.train.lr_max},
                {"lr_min", cfg.train.lr_min},
                {"cycles", cfg.train.cycles},
                {"val_fraction", cfg.train.val_fraction},
                {"evals_per_epoch", cfg.train.evals_per_epoch},
                {"max_val_examples", cfg.train.max_val_examples}};
  j["experiment"] = {{"input_dists", grids},
                     {"query_dists", qgrids},
                     {"ablate_x", cfg.experiment.ablate_x},
                     {"grid_mode", cfg.experiment.grid_mode},
                     {"query_offset_max", cfg.experiment.query_offset_max},
                     {"anomaly",
                      {{"station_fraction", cfg.experiment.anomaly.station_fraction},
                       {"magnitude", cfg.experiment.anomaly.magnitude},
                       {"corrupt_context", cfg.experiment.anomaly.corrupt_context},
                       {"history_window", cfg.experiment.anomaly.history_window},
                       {"seed", cfg.experiment.anomaly.seed}}}};
  return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = run_config_to_json(cfg);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tpc
