#include "tpc/experiments.hpp"

#include "tpc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace tpc {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open output file " + path);
  return f;
}

json meta_block(const RunConfig& cfg) {
  return json{{"schema_version", 1},
              {"config_hash", config_hash(cfg)},
              {"seed", cfg.seed}};
}

void write_json(const RunConfig& cfg, const std::string& path, json body) {
  body["meta"] = meta_block(cfg);
  auto f = open_out(path);
  f << body.dump(2) << "\n";
}

std::string csv_header_comment(const RunConfig& cfg) {
  return "# config_hash=" + config_hash(cfg) +
         " seed=" + std::to_string(cfg.seed) + " schema_version=1\n";
}

std::vector<Episode> generate_episodes(const RunConfig& cfg, uint64_t seed,
                                       int count, int id_base) {
  std::vector<Episode> eps;
  eps.reserve(count);
  Rng root(seed);
  for (int e = 0; e < count; ++e) {
    if (cfg.task == Task::kWeather) {
      eps.push_back(
          gen_field_episode(cfg.data.field, root.fork(e).next_u64(), id_base + e)
              .episode);
    } else {
      eps.push_back(
          gen_entity_episode(cfg.data.entity, root.fork(e).next_u64(), id_base + e));
    }
  }
  return eps;
}

}  // namespace

Dataset build_dataset(const RunConfig& cfg, uint64_t seed) {
  if (!cfg.data.csv_paths.empty()) {
    std::vector<Episode> eps;
    for (const auto& p : cfg.data.csv_paths) {
      auto loaded = load_csv(p);
      eps.insert(eps.end(), loaded.begin(), loaded.end());
    }
    DatasetConfig dc = cfg.data.dataset;
    dc.episodes = static_cast<int>(eps.size());
    return make_dataset_from_episodes(eps, cfg.task, dc, seed);
  }
  const auto eps = generate_episodes(cfg, seed, cfg.data.dataset.episodes, 0);
  return make_dataset_from_episodes(eps, cfg.task, cfg.data.dataset, seed ^ 0xd5ULL);
}

Dataset build_test_dataset(const RunConfig& cfg, uint64_t seed) {
  const uint64_t test_seed = seed ^ 0x7e57da7aULL;
  const auto eps =
      generate_episodes(cfg, test_seed, cfg.data.test_episodes, 100000);
  DatasetConfig dc = cfg.data.dataset;
  dc.episodes = cfg.data.test_episodes;
  dc.examples_per_episode = cfg.data.test_examples_per_episode;
  return make_dataset_from_episodes(eps, cfg.task, dc, test_seed ^ 0xd5ULL);
}

std::vector<Episode> build_test_episodes(const RunConfig& cfg, uint64_t seed) {
  return generate_episodes(cfg, seed ^ 0x7e57da7aULL, cfg.data.test_episodes, 100000);
}

double auto_eps_s(const Dataset& ds, int k) {
  // One representative example per episode; averages the distance to the
  // k-th nearest distinct station location.
  std::set<int> seen;
  std::vector<double> kth;
  for (const auto& ex : ds.examples) {
    if (!seen.insert(ex.episode_id).second) continue;
    std::vector<std::array<double, 2>> locs;
    std::set<int64_t> ids;
    for (int p = 0; p < ex.P.size(); ++p) {
      if (!ids.insert(ex.P.entity(p)).second) continue;
      auto l = ex.P.loc(p);
      locs.push_back({l[0], l[1]});
    }
    if (static_cast<int>(locs.size()) <= k) continue;
    for (size_t i = 0; i < locs.size(); ++i) {
      std::vector<double> d;
      d.reserve(locs.size() - 1);
      for (size_t j = 0; j < locs.size(); ++j) {
        if (i == j) continue;
        const double dx = locs[i][0] - locs[j][0];
        const double dy = locs[i][1] - locs[j][1];
        d.push_back(std::sqrt(dx * dx + dy * dy));
      }
      std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
      kth.push_back(d[k - 1]);
    }
  }
  if (kth.empty()) throw DataError("auto_eps_s: not enough stations");
  double s = 0.0;
  for (double v : kth) s += v;
  return s / static_cast<double>(kth.size());
}

TrainOutcome run_training(RunConfig cfg, const Dataset& ds,
                          const EvalCallback& on_eval) {
  finalize_model_dims(cfg);
  if (cfg.eps_s_auto && !cfg.model.combined &&
      cfg.model.temporal == TemporalKind::kSpatialWindow) {
    cfg.model.eps_s = auto_eps_s(ds, cfg.model.k);
  }
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 13);
  ModelParams init = init_model(cfg.model, rng);
  TrainOutcome out;
  out.resolved_model = cfg.model;
  out.result = train(std::move(init), ds, cfg.train, on_eval);
  out.val_metrics = evaluate(out.result.model, out.result.stats, ds,
                             out.result.val_indices, cfg.precision);
  return out;
}

GenOutput cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const auto eps = generate_episodes(cfg, cfg.seed, cfg.data.dataset.episodes, 0);
  GenOutput out;
  out.episodes = static_cast<int>(eps.size());
  for (const auto& e : eps) out.samples += static_cast<int>(e.samples.size());
  if (!out_dir.empty()) {
    out.csv_path = out_dir + "/episodes.csv";
    write_csv(eps, out.csv_path);
    // Prepend provenance comment: rewrite with header line.
    std::ifstream in(out.csv_path);
    std::string body((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    auto f = open_out(out.csv_path);
    f << csv_header_comment(cfg) << body;
    write_json(cfg, out_dir + "/gen_summary.json",
               json{{"episodes", out.episodes},
                    {"samples", out.samples},
                    {"config", json::parse(run_config_to_json(cfg))}});
  }
  return out;
}

namespace {

json metrics_to_json(const Metrics& m) {
  json attrs = json::array();
  for (const auto& a : m.attrs)
    attrs.push_back(json{{"name", a.name}, {"mean", a.mean}, {"ci95", a.ci}});
  return json{{"attrs", attrs},
              {"total_mean", m.total_mean},
              {"total_ci95", m.total_ci},
              {"n_queries", m.n_queries}};
}

}  // namespace

TrainOutput cmd_train(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const Dataset ds = build_dataset(cfg, cfg.seed);

  std::ofstream jsonl, curves;
  if (!out_dir.empty()) {
    jsonl = open_out(out_dir + "/metrics.jsonl");
    curves = open_out(out_dir + "/curves.csv");
    curves << csv_header_comment(cfg) << "step,lr,train_loss,val_loss\n";
  }
  EvalCallback cb = [&](const EvalPoint& p) {
    if (!out_dir.empty()) {
      jsonl << json{{"step", p.step},
                    {"lr", p.lr},
                    {"train_loss", p.train_loss},
                    {"val_loss", p.val_loss}}
                   .dump()
            << "\n";
      curves << p.step << "," << p.lr << "," << p.train_loss << "," << p.val_loss
             << "\n";
    }
  };

  TrainOutcome outcome = run_training(cfg, ds, cb);

  TrainOutput out;
  out.best_val = outcome.result.best_val;
  out.val_metrics = outcome.val_metrics;
  if (!out_dir.empty()) {
    out.checkpoint_path = out_dir + "/checkpoint.json";
    Checkpoint ck;
    ck.model = std::move(outcome.result.model);
    ck.stats = outcome.result.stats;
    ck.task = cfg.task;
    ck.orient_bins = ds.orient_bins;
    ck.seed = cfg.seed;
    ck.config_hash = config_hash(cfg);
    save_checkpoint(ck, out.checkpoint_path);
    write_json(cfg, out_dir + "/train_summary.json",
               json{{"best_val", out.best_val},
                    {"total_steps", outcome.result.total_steps},
                    {"val_metrics", metrics_to_json(out.val_metrics)},
                    {"checkpoint", out.checkpoint_path}});
  }
  return out;
}

Metrics cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                 const std::string& out_dir) {
  ensure_dir(out_dir);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (ck.task != cfg.task)
    throw ConfigError("cmd_eval: checkpoint task does not match config task");
  const Dataset test = build_test_dataset(cfg, cfg.seed);
  Metrics m = evaluate(ck.model, ck.stats, test, {}, cfg.precision);
  if (!out_dir.empty())
    write_json(cfg, out_dir + "/eval_metrics.json", metrics_to_json(m));
  return m;
}

GradCheckOutput cmd_gradcheck(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  // Micro instance: a small two-layer model over a handful of points.
  RunConfig micro = cfg;
  micro.model.sizes.latent = {6, 6};
  micro.model.sizes.encoder_hidden = {8, 8};
  micro.model.sizes.weight_hidden = {8};
  micro.model.sizes.c_mid = 4;
  micro.model.sizes.query_latent = 8;
  micro.model.sizes.decoder_hidden = {8};
  micro.model.sizes.ds_phi_hidden = {8};
  micro.model.sizes.ds_latent = 8;
  micro.model.sizes.ds_rho_hidden = {8};
  micro.model.k = 4;
  if (micro.task == Task::kWeather) {
    micro.data.field.stations = 8;
    micro.data.field.length = 16.0;
  } else {
    micro.data.entity.team_min = 2;
    micro.data.entity.team_max = 3;
    micro.data.entity.steps = 16;
  }
  micro.data.dataset.episodes = 2;
  micro.data.dataset.examples_per_episode = 1;
  finalize_model_dims(micro);

  const Dataset ds = build_dataset(micro, micro.seed);
  if (micro.eps_s_auto) micro.model.eps_s = 2.0;
  std::vector<int> train_idx, val_idx;
  split_by_episode(ds, 0.5, micro.seed, train_idx, val_idx);
  const NormalizationStats stats = compute_stats(ds, train_idx);
  const PreparedExample ex =
      prepare_example(ds.examples[train_idx.front()], ds.task, stats, ds.orient_bins);

  Rng rng(micro.seed * 31 + 7);
  ModelParams model = init_model(micro.model, rng);
  ParamSet ps;
  model.collect(ps);
  const CloudGeometry geom = build_geometry(ex.P, ex.Q, model.config, false);
  auto build = [&](Tape& tape) {
    Var pred = model_forward(tape, model, ex.P, geom);
    return example_loss(tape, pred, ex, ds.task, ds.orient_bins);
  };
  const GradCheckReport rep = grad_check(build, ps, 1e-5);

  GradCheckOutput out;
  out.max_rel_err = rep.max_rel_err;
  out.checked = rep.checked;
  out.worst_param = rep.worst.param;
  if (!out_dir.empty())
    write_json(cfg, out_dir + "/gradcheck.json",
               json{{"max_rel_err", rep.max_rel_err},
                    {"checked_scalars", rep.checked},
                    {"worst", json{{"param", rep.worst.param},
                                   {"index", rep.worst.index},
                                   {"analytic", rep.worst.analytic},
                                   {"numeric", rep.worst.numeric}}}});
  return out;
}

DistGridOutput cmd_dist_grid(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  DistGridOutput out;
  const bool do_input =
      cfg.experiment.grid_mode == "input" || cfg.experiment.grid_mode == "both";
  const bool do_query =
      cfg.experiment.grid_mode == "query" || cfg.experiment.grid_mode == "both";

  if (do_input) {
    const auto& dists = cfg.experiment.input_dists;
    for (const auto& d : dists) out.names.push_back(d.name);
    // Pre-built evaluation datasets, one per input distribution.
    std::vector<Dataset> evalsets;
    for (const auto& d : dists) {
      RunConfig c = cfg;
      c.data.dataset.history = d.dist;
      evalsets.push_back(build_test_dataset(c, cfg.seed));
    }
    for (const auto& d : dists) {
      RunConfig c = cfg;
      c.data.dataset.history = d.dist;
      const Dataset ds = build_dataset(c, c.seed);
      TrainOutcome res = run_training(c, ds);
      std::vector<double> row;
      for (auto& es : evalsets)
        row.push_back(
            evaluate(res.result.model, res.result.stats, es, {}, cfg.precision)
                .total_mean);
      out.loss.push_back(std::move(row));
    }
    if (!out_dir.empty()) {
      auto f = open_out(out_dir + "/dist_grid_input.csv");
      f << csv_header_comment(cfg) << "train\\eval";
      for (const auto& n : out.names) f << "," << n;
      f << "\n";
      for (size_t i = 0; i < out.loss.size(); ++i) {
        f << out.names[i];
        for (double v : out.loss[i]) f << "," << v;
        f << "\n";
      }
    }
  }

  if (do_query) {
    const auto& dists = cfg.experiment.query_dists;
    if (out.names.empty())
      for (const auto& d : dists) out.names.push_back(d.name);
    for (const auto& d : dists) {
      RunConfig c = cfg;
      c.data.dataset.query = d.dist;
      const Dataset ds = build_dataset(c, c.seed);
      TrainOutcome res = run_training(c, ds);
      std::vector<double> row;
      for (int off = 1; off <= cfg.experiment.query_offset_max; ++off) {
        RunConfig ec = cfg;
        ec.data.dataset.query =
            OffsetDistribution{OffsetKind::kFixed, {static_cast<double>(off)},
                               0, 0, 5.0, 0};
        const Dataset es = build_test_dataset(ec, cfg.seed);
        row.push_back(
            evaluate(res.result.model, res.result.stats, es, {}, cfg.precision)
                .total_mean);
      }
      out.loss_by_offset.push_back(std::move(row));
    }
    if (!out_dir.empty()) {
      auto f = open_out(out_dir + "/dist_grid_query.csv");
      f << csv_header_comment(cfg) << "train\\offset";
      for (int off = 1; off <= cfg.experiment.query_offset_max; ++off)
        f << "," << off;
      f << "\n";
      for (size_t i = 0; i < out.loss_by_offset.size(); ++i) {
        f << dists[i].name;
        for (double v : out.loss_by_offset[i]) f << "," << v;
        f << "\n";
      }
    }
  }

  if (!out_dir.empty()) {
    json body{{"names", out.names}};
    if (do_input) body["loss"] = out.loss;
    if (do_query) body["loss_by_offset"] = out.loss_by_offset;
    write_json(cfg, out_dir + "/dist_grid.json", std::move(body));
  }
  return out;
}

AblateOutput cmd_ablate_combined(const RunConfig& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  AblateOutput out;
  const Dataset ds = build_dataset(cfg, cfg.seed);
  const Dataset test = build_test_dataset(cfg, cfg.seed);

  auto run_variant = [&](bool combined, double x) {
    RunConfig c = cfg;
    c.model.combined = combined;
    c.model.combined_x = x;
    TrainOutcome res = run_training(c, ds);
    return evaluate(res.result.model, res.result.stats, test, {}, cfg.precision)
        .total_mean;
  };

  out.variants.push_back("separated");
  out.loss.push_back(run_variant(false, 1.0));
  for (double x : cfg.experiment.ablate_x) {
    out.variants.push_back("combined_x=" + std::to_string(x));
    out.loss.push_back(run_variant(true, x));
  }

  if (!out_dir.empty()) {
    auto f = open_out(out_dir + "/ablate_combined.csv");
    f << csv_header_comment(cfg) << "variant,loss\n";
    for (size_t i = 0; i < out.variants.size(); ++i)
      f << out.variants[i] << "," << out.loss[i] << "\n";
    write_json(cfg, out_dir + "/ablate_combined.json",
               json{{"variants", out.variants}, {"loss", out.loss}});
  }
  return out;
}

AnomalyOutput cmd_anomaly(const std::string& checkpoint_path, const RunConfig& cfg,
                          const std::string& out_dir) {
  ensure_dir(out_dir);
  if (cfg.task != Task::kWeather)
    throw ConfigError("cmd_anomaly: the anomaly protocol targets the weather task");
  Checkpoint ck = load_checkpoint(checkpoint_path);
  if (ck.task != cfg.task)
    throw ConfigError("cmd_anomaly: checkpoint task does not match config task");

  const auto clean = build_test_episodes(cfg, cfg.seed);
  AnomalyConfig acfg = cfg.experiment.anomaly;
  acfg.seed ^= cfg.seed * 0x9e37ULL;
  const InjectResult injected = inject(clean, acfg);
  const auto scores =
      score_anomalies(ck.model, ck.stats, clean, injected, acfg, cfg.precision);

  std::vector<double> s(scores.size());
  std::vector<uint8_t> l(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    s[i] = scores[i].score;
    l[i] = scores[i].label;
  }
  AnomalyOutput out;
  out.roc = roc_auc(s, l);
  out.scored = static_cast<int>(scores.size());
  for (uint8_t li : l) out.positives += li;

  if (!out_dir.empty()) {
    auto f = open_out(out_dir + "/roc.csv");
    f << csv_header_comment(cfg) << "fpr,tpr\n";
    for (auto& [fpr, tpr] : out.roc.points) f << fpr << "," << tpr << "\n";
    write_json(cfg, out_dir + "/anomaly.json",
               json{{"auroc", out.roc.auroc},
                    {"scored_samples", out.scored},
                    {"positives", out.positives}});
  }
  return out;
}

}  // namespace tpc
