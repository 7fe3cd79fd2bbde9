// tpc: train, evaluate and probe TemporalPointConv models on irregular
// spatio-temporal point clouds.
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tpc/experiments.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;
  int jobs = 0;
  std::string precision;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* c = cmd->add_option("--config", args.config_path, "run configuration (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--jobs", args.jobs, "worker thread limit (0 = all cores)");
  cmd->add_option("--precision", args.precision,
                  "single or double (overrides config)")
      ->check(CLI::IsMember({"single", "double"}));
}

tpc::RunConfig resolve(const CommonArgs& args) {
  tpc::RunConfig cfg = tpc::load_run_config(args.config_path);
  if (args.seed >= 0) {
    cfg.seed = static_cast<uint64_t>(args.seed);
    cfg.train.seed = cfg.seed;
  }
  if (!args.precision.empty()) {
    cfg.precision =
        args.precision == "single" ? tpc::Precision::kSingle : tpc::Precision::kDouble;
    cfg.train.precision = cfg.precision;
  }
#ifdef _OPENMP
  if (args.jobs > 0) omp_set_num_threads(args.jobs);
#endif
  return cfg;
}

std::string out_or_config_dir(const CommonArgs& args, const tpc::RunConfig& cfg) {
  return args.out_dir.empty() ? cfg.out_dir : args.out_dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TemporalPointConv: point-based convolution over irregular "
               "spatio-temporal samples"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, grad_args, grid_args, ablate_args,
      anomaly_args;
  std::string eval_checkpoint, anomaly_checkpoint;

  auto* gen = app.add_subcommand("gen", "generate synthetic episodes to CSV");
  add_common(gen, gen_args);

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint + curves");
  add_common(train, train_args);

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a fresh test set");
  add_common(evalc, eval_args);
  evalc->add_option("--checkpoint", eval_checkpoint, "checkpoint JSON")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(grad, grad_args);

  auto* grid = app.add_subcommand(
      "dist-grid", "cross-evaluate models trained per input/query distribution");
  add_common(grid, grid_args);

  auto* ablate = app.add_subcommand(
      "ablate-combined", "separated space/time layers vs joint-distance variants");
  add_common(ablate, ablate_args);

  auto* anomaly = app.add_subcommand(
      "anomaly", "inject sensor faults, score by prediction error, report ROC/AUROC");
  add_common(anomaly, anomaly_args);
  anomaly->add_option("--checkpoint", anomaly_checkpoint, "checkpoint JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = resolve(gen_args);
      auto out = tpc::cmd_gen(cfg, out_or_config_dir(gen_args, cfg));
      std::cout << "episodes=" << out.episodes << " samples=" << out.samples
                << " -> " << out.csv_path << "\n";
    } else if (train->parsed()) {
      auto cfg = resolve(train_args);
      auto out = tpc::cmd_train(cfg, out_or_config_dir(train_args, cfg));
      std::cout << "best_val=" << out.best_val << " total=" << out.val_metrics.total_mean
                << " checkpoint=" << out.checkpoint_path << "\n";
    } else if (evalc->parsed()) {
      auto cfg = resolve(eval_args);
      auto m = tpc::cmd_eval(eval_checkpoint, cfg, out_or_config_dir(eval_args, cfg));
      for (const auto& a : m.attrs)
        std::cout << a.name << " " << a.mean << " +- " << a.ci << "\n";
      std::cout << "total " << m.total_mean << " +- " << m.total_ci << " over "
                << m.n_queries << " queries\n";
    } else if (grad->parsed()) {
      auto cfg = resolve(grad_args);
      auto out = tpc::cmd_gradcheck(cfg, out_or_config_dir(grad_args, cfg));
      std::cout << "max_rel_err=" << out.max_rel_err << " over " << out.checked
                << " scalars (worst: " << out.worst_param << ")\n";
    } else if (grid->parsed()) {
      auto cfg = resolve(grid_args);
      auto out = tpc::cmd_dist_grid(cfg, out_or_config_dir(grid_args, cfg));
      for (size_t i = 0; i < out.loss.size(); ++i) {
        std::cout << out.names[i] << ":";
        for (double v : out.loss[i]) std::cout << " " << v;
        std::cout << "\n";
      }
    } else if (ablate->parsed()) {
      auto cfg = resolve(ablate_args);
      auto out = tpc::cmd_ablate_combined(cfg, out_or_config_dir(ablate_args, cfg));
      for (size_t i = 0; i < out.variants.size(); ++i)
        std::cout << out.variants[i] << " " << out.loss[i] << "\n";
    } else if (anomaly->parsed()) {
      auto cfg = resolve(anomaly_args);
      auto out =
          tpc::cmd_anomaly(anomaly_checkpoint, cfg, out_or_config_dir(anomaly_args, cfg));
      std::cout << "auroc=" << out.roc.auroc << " scored=" << out.scored
                << " positives=" << out.positives << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
