#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlab/analysis.hpp"
#include "mtlab/closed_form.hpp"
#include "mtlab/errors.hpp"
#include "mtlab/harness.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/model.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"
#include "mtlab/task.hpp"
#include "mtlab/trainer.hpp"
#include "mtlab/weighting.hpp"

using nlohmann::json;
using namespace mtlab;

namespace {

struct GenOpts {
  std::string kind = "linear";
  std::size_t d = 10;
  std::size_t m = 100;
  double sigma = 0.0;
  double relu_scale = 1.0;
  double kappa = 1.0;
  std::size_t boost_count = 0;
  std::size_t split = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct FitOpts {
  std::vector<std::string> task_paths;
  std::size_t capacity = 1;
  std::string activation = "linear";
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
  std::string batching = "task_alternating";
  bool freeze_shared = false;
  std::vector<double> weights;
  std::string model_out;
};

struct ReweightOpts {
  std::vector<std::string> task_paths;
  std::string scheme = "svd";
  double energy = 0.95;
  long long rank = -1;
  bool least_squares = false;
  std::size_t capacity = 1;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
};

struct ScoreOpts {
  std::string left;
  std::string right;
  double energy = 0.99;
};

struct SweepOpts {
  std::string config_path;
  std::string out_dir;
  std::size_t workers = 0;  // 0 keeps the config's value
};

struct VerifyOpts {
  std::string config_path;
  std::string out_dir;
};

struct RenderOpts {
  std::string result_dir;
  std::string out_dir;
};

std::vector<TaskDataset> load_tasks(const std::vector<std::string>& paths) {
  std::vector<TaskDataset> tasks;
  tasks.reserve(paths.size());
  for (const std::string& p : paths) tasks.push_back(load_task(p));
  return tasks;
}

std::vector<const TaskDataset*> borrow(const std::vector<TaskDataset>& tasks) {
  std::vector<const TaskDataset*> ptrs;
  ptrs.reserve(tasks.size());
  for (const TaskDataset& t : tasks) ptrs.push_back(&t);
  return ptrs;
}

TrainConfig fit_train_config(const FitOpts& o) {
  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.seed = o.seed;
  cfg.freeze_shared = o.freeze_shared;
  if (o.batching == "task_alternating")
    cfg.batching = Batching::task_alternating;
  else if (o.batching == "joint")
    cfg.batching = Batching::joint;
  else
    throw ArgumentError("batching must be 'task_alternating' or 'joint'");
  if (!o.weights.empty()) cfg.weights = WeightVector{o.weights};
  return cfg;
}

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "relu") return Activation::relu;
  throw ArgumentError("activation must be 'linear' or 'relu'");
}

double train_mse(const TaskDataset& t, const Vec& theta) {
  auto [x, y] = t.train_data();
  Vec pred = kernels::matvec(x, theta);
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - y[i];
    sse += d * d;
  }
  return sse / static_cast<double>(pred.size());
}

int cmd_gen(const GenOpts& o) {
  if (o.out.empty()) throw ArgumentError("gen: --out is required");
  Rng theta_rng(mix_seed(o.seed, 1));
  Vec theta = random_unit_vector(o.d, theta_rng);

  std::optional<CovarianceSpec> cov;
  if (o.kappa > 1.0) {
    if (o.kind != "linear")
      throw ArgumentError("gen: covariance shaping applies to linear tasks only");
    const std::size_t bc =
        o.boost_count ? o.boost_count : std::max<std::size_t>(1, o.d / 10);
    if (bc > o.d) throw ArgumentError("gen: boost count exceeds d");
    std::vector<std::size_t> boosted(bc);
    for (std::size_t i = 0; i < bc; ++i) boosted[i] = i;
    cov = CovarianceSpec{random_orthonormal(o.d, mix_seed(o.seed, 2)), boosted,
                         o.kappa};
  }

  TaskDataset task;
  if (o.kind == "linear")
    task = gen_linear_task(theta, o.m, o.sigma, cov ? &*cov : nullptr,
                           mix_seed(o.seed, 3));
  else if (o.kind == "relu")
    task = gen_relu_task(theta, o.relu_scale, o.m, o.sigma, mix_seed(o.seed, 3));
  else if (o.kind == "logistic")
    task = gen_logistic_task(theta, o.m, mix_seed(o.seed, 3));
  else
    throw ArgumentError("gen: kind must be 'linear', 'relu', or 'logistic'");

  if (o.split > 0) split_dataset(task, o.split, mix_seed(o.seed, 4));
  save_task(task, o.out);

  json report{{"path", o.out},
              {"kind", o.kind},
              {"d", o.d},
              {"m", o.m},
              {"train_rows", task.train_idx.size()},
              {"val_rows", task.val_idx.size()}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_stl(const std::string& path) {
  TaskDataset task = load_task(path);
  Vec theta = stl_solve(task);

  json report{{"task", path}, {"theta", theta}, {"train_mse", train_mse(task, theta)}};
  if (task.has_validation()) {
    auto [xv, yv] = task.validation_data();
    Vec pred = kernels::matvec(xv, theta);
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - yv[i];
      sse += d * d;
    }
    report["val_mse"] = sse / static_cast<double>(pred.size());
  }
  if (task.theta_true && task.theta_true->cols() == 1) {
    Vec truth = task.theta_true->column(0);
    Vec diff = theta;
    kernels::axpy(-1.0, truth, diff);
    const double denom = kernels::norm2(truth);
    if (denom > 0.0) report["rel_error_vs_truth"] = kernels::norm2(diff) / denom;
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_fit(const FitOpts& o, bool with_alignments) {
  if (o.task_paths.empty()) throw ArgumentError("no task files given");
  std::vector<TaskDataset> tasks = load_tasks(o.task_paths);
  std::vector<const TaskDataset*> ptrs = borrow(tasks);

  TrainConfig cfg = fit_train_config(o);
  cfg.train_alignments = with_alignments;

  MTLModel init = MTLModel::random_init(tasks[0].dim(), o.capacity, tasks.size(),
                                        parse_activation(o.activation),
                                        mix_seed(o.seed, 5), with_alignments);
  TrainResult res =
      with_alignments ? train_aligned(init, ptrs, cfg) : train(init, ptrs, cfg);

  json report;
  report["tasks"] = o.task_paths;
  report["capacity"] = o.capacity;
  report["epochs"] = o.epochs;
  report["final_total_loss"] = res.trace.back().total;
  report["final_task_losses"] = res.trace.back().task_loss;
  report["initial_total_loss"] = res.trace.front().total;

  json metrics = json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!tasks[i].has_validation()) {
      metrics.push_back(nullptr);
      continue;
    }
    auto [xv, yv] = tasks[i].validation_data();
    metrics.push_back(task_metric(res.model, i, xv, yv, tasks[i].kind));
  }
  report["validation_metric"] = metrics;

  if (with_alignments) {
    report["alignment_condition"] = res.alignment_condition;
    if (tasks.size() >= 2) {
      auto [x0, y0] = tasks[0].train_data();
      auto [x1, y1] = tasks[1].train_data();
      report["score_before"] = covariance_similarity_score(x0, x1);
      const auto& align = *res.model.alignments;
      report["score_after"] = covariance_similarity_score(
          kernels::matmul(x0, align[0]), kernels::matmul(x1, align[1]));
    }
  }

  if (!o.model_out.empty()) {
    save_model(res.model, o.model_out);
    report["model_path"] = o.model_out;
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_reweight(const ReweightOpts& o) {
  if (o.task_paths.empty()) throw ArgumentError("no task files given");
  std::vector<TaskDataset> tasks = load_tasks(o.task_paths);
  std::vector<const TaskDataset*> ptrs = borrow(tasks);

  json report;
  report["tasks"] = o.task_paths;
  report["scheme"] = o.scheme;
  if (o.scheme == "uniform") {
    report["weights"] = WeightVector::uniform(tasks.size()).alpha;
  } else if (o.scheme == "svd") {
    ReweightOptions opts;
    opts.energy = o.energy;
    opts.use_least_squares = o.least_squares;
    if (o.rank >= 0) opts.rank = static_cast<std::size_t>(o.rank);
    ReweightResult rw = svd_reweight(ptrs, opts);
    report["weights"] = rw.weights.alpha;
    report["rank_used"] = rw.rank_used;
    report["spectrum"] = rw.spectrum;
  } else if (o.scheme == "uncertainty") {
    UncertaintyConfig cfg;
    cfg.train.lr = o.lr;
    cfg.train.epochs = o.epochs;
    cfg.train.batch_size = o.batch_size;
    cfg.train.seed = o.seed;
    MTLModel init =
        MTLModel::random_init(tasks[0].dim(), o.capacity, tasks.size(),
                              Activation::linear, mix_seed(o.seed, 5));
    UncertaintyResult res = uncertainty_weights(init, ptrs, cfg);
    report["weights"] = res.weights.alpha;
    report["sigma"] = res.sigma;
    report["clamped"] = res.clamped;
  } else {
    throw ArgumentError("scheme must be 'uniform', 'svd', or 'uncertainty'");
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_score(const ScoreOpts& o) {
  TaskDataset a = load_task(o.left);
  TaskDataset b = load_task(o.right);
  json report{{"left", o.left},
              {"right", o.right},
              {"energy", o.energy},
              {"score", covariance_similarity_score(a.x, b.x, o.energy)}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const SweepOpts& o) {
  ExperimentConfig cfg = load_config(o.config_path);
  if (o.workers > 0) cfg.workers = o.workers;
  ExperimentResult result = run_experiment(cfg);

  const std::string out =
      o.out_dir.empty() ? std::string("results_") + to_string(cfg.kind) : o.out_dir;
  render(result, out);

  std::size_t failed = 0;
  for (const CellResult& c : result.cells)
    if (!c.error.empty()) ++failed;
  std::cout << "cells: " << result.cells.size() << " (" << failed
            << " failed), artifacts in " << out << '\n';
  return 0;
}

ExperimentConfig default_verify_config() {
  json j{{"kind", "theory_verify"},
         {"grid", {0.0, 0.02, 0.05}},
         {"seeds", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}},
         {"generator", json{{"d", 10},
                            {"source_m", 2000},
                            {"target_m_train", 40},
                            {"target_sigma", 0.05},
                            {"contraction_triples", 100}}}};
  return config_from_json(j);
}

int cmd_verify(const VerifyOpts& o) {
  ExperimentConfig cfg =
      o.config_path.empty() ? default_verify_config() : load_config(o.config_path);
  if (cfg.kind != ExperimentKind::theory_verify)
    throw ArgumentError("verify: config kind must be theory_verify");

  ExperimentResult result = run_experiment(cfg);
  if (!o.out_dir.empty()) render(result, o.out_dir);

  std::size_t usable = 0;
  std::vector<std::string> violations;
  for (const CellResult& c : result.cells) {
    if (!c.error.empty())
      throw NumericalError("verify cell (grid " + std::to_string(c.grid_value) +
                           ", seed " + std::to_string(c.seed) + "): " + c.error);
    const std::string tag = "grid " + std::to_string(c.grid_value) + ", seed " +
                            std::to_string(c.seed);
    if (c.values.at("contraction_fails") != 0.0)
      violations.push_back(tag + ": sine contraction violated");
    if (c.values.at("assumption_ok") == 1.0) {
      ++usable;
      if (c.values.at("satisfied") != 1.0)
        violations.push_back(tag + ": recovery bound violated (lhs " +
                             std::to_string(c.values.at("lhs")) + " > rhs " +
                             std::to_string(c.values.at("rhs")) + ")");
      if (c.values.at("angle") > c.values.at("angle_bound") + 0.05)
        violations.push_back(tag + ": shared-direction angle exceeds its bound");
    }
  }
  if (usable == 0)
    violations.push_back("no instance fell within the bound's assumption");

  for (const AggregatePoint& p : result.aggregates)
    std::cout << "sin " << p.grid_value << ": " << p.count << " cells, mean c "
              << (p.mean.count("c") ? p.mean.at("c") : 0.0) << ", mean lhs "
              << (p.mean.count("lhs") ? p.mean.at("lhs") : 0.0) << '\n';

  if (violations.empty()) {
    std::cout << "verify: PASS (" << usable << " instances inside the assumption)\n";
    return 0;
  }
  for (const std::string& v : violations) std::cerr << "verify: " << v << '\n';
  std::cerr << "verify: FAIL\n";
  return 3;
}

int cmd_render(const RenderOpts& o) {
  ExperimentResult result = load_result(o.result_dir);
  render(result, o.out_dir.empty() ? o.result_dir : o.out_dir);
  std::cout << "re-rendered " << result.cells.size() << " cells\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shared-module multi-task learning toolkit"};
  app.require_subcommand(1);

  GenOpts gen_opts;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic task file");
  gen->add_option("--kind", gen_opts.kind, "linear, relu, or logistic");
  gen->add_option("--d", gen_opts.d, "input dimension");
  gen->add_option("--m", gen_opts.m, "sample count");
  gen->add_option("--sigma", gen_opts.sigma, "label noise");
  gen->add_option("--relu-scale", gen_opts.relu_scale, "output scale for relu tasks");
  gen->add_option("--kappa", gen_opts.kappa,
                  "covariance boost on the leading rotated directions");
  gen->add_option("--boost-count", gen_opts.boost_count,
                  "boosted direction count (0 means d / 10)");
  gen->add_option("--split", gen_opts.split, "train-row count for a split");
  gen->add_option("--seed", gen_opts.seed, "generator seed");
  gen->add_option("--out", gen_opts.out, "output CSV path")->required();

  std::string stl_path;
  CLI::App* stl = app.add_subcommand("stl", "single-task least squares report");
  stl->add_option("task", stl_path, "task CSV path")->required();

  FitOpts mtl_opts;
  CLI::App* mtl = app.add_subcommand("mtl", "co-train a shared module");
  FitOpts align_opts;
  CLI::App* align =
      app.add_subcommand("align", "co-train with per-task alignment matrices");
  for (auto [cmd, opts] : {std::pair{mtl, &mtl_opts}, std::pair{align, &align_opts}}) {
    cmd->add_option("tasks", opts->task_paths, "task CSV paths")->required();
    cmd->add_option("--capacity", opts->capacity, "shared-module width r");
    cmd->add_option("--activation", opts->activation, "linear or relu");
    cmd->add_option("--lr", opts->lr, "step size");
    cmd->add_option("--epochs", opts->epochs, "epoch count");
    cmd->add_option("--batch-size", opts->batch_size, "rows per step");
    cmd->add_option("--seed", opts->seed, "init and shuffle seed");
    cmd->add_option("--batching", opts->batching, "task_alternating or joint");
    cmd->add_flag("--freeze-shared", opts->freeze_shared,
                  "keep the shared module at its initialization");
    cmd->add_option("--weights", opts->weights, "per-task loss weights");
    cmd->add_option("--save-model", opts->model_out, "write the trained model");
  }

  ReweightOpts rw_opts;
  CLI::App* reweight = app.add_subcommand("reweight", "compute task weights");
  reweight->add_option("tasks", rw_opts.task_paths, "task CSV paths")->required();
  reweight->add_option("--scheme", rw_opts.scheme, "uniform, svd, or uncertainty");
  reweight->add_option("--energy", rw_opts.energy, "svd: retained spectral energy");
  reweight->add_option("--rank", rw_opts.rank, "svd: explicit subspace rank");
  reweight->add_flag("--least-squares", rw_opts.least_squares,
                     "svd: least-squares estimates instead of correlations");
  reweight->add_option("--capacity", rw_opts.capacity, "uncertainty: model width");
  reweight->add_option("--lr", rw_opts.lr, "uncertainty: step size");
  reweight->add_option("--epochs", rw_opts.epochs, "uncertainty: epoch count");
  reweight->add_option("--batch-size", rw_opts.batch_size, "uncertainty: batch rows");
  reweight->add_option("--seed", rw_opts.seed, "uncertainty: init seed");

  ScoreOpts score_opts;
  CLI::App* score =
      app.add_subcommand("score", "covariance similarity of two task files");
  score->add_option("left", score_opts.left, "first task CSV")->required();
  score->add_option("right", score_opts.right, "second task CSV")->required();
  score->add_option("--energy", score_opts.energy, "retained spectral energy");

  SweepOpts sweep_opts;
  CLI::App* sweep = app.add_subcommand("sweep", "run an experiment config");
  sweep->add_option("config", sweep_opts.config_path, "experiment JSON")->required();
  sweep->add_option("--out", sweep_opts.out_dir, "artifact directory");
  sweep->add_option("--workers", sweep_opts.workers, "override worker count");

  VerifyOpts verify_opts;
  CLI::App* verify =
      app.add_subcommand("verify", "run the theory checks and gate on them");
  verify->add_option("config", verify_opts.config_path,
                     "theory_verify JSON (built-in default when omitted)");
  verify->add_option("--out", verify_opts.out_dir, "also render artifacts here");

  RenderOpts render_opts;
  CLI::App* rerender =
      app.add_subcommand("render", "re-render artifacts from a result directory");
  rerender->add_option("dir", render_opts.result_dir, "result directory")->required();
  rerender->add_option("--out", render_opts.out_dir, "destination (default: in place)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_gen(gen_opts);
    if (app.got_subcommand(stl)) return cmd_stl(stl_path);
    if (app.got_subcommand(mtl)) return cmd_fit(mtl_opts, false);
    if (app.got_subcommand(align)) return cmd_fit(align_opts, true);
    if (app.got_subcommand(reweight)) return cmd_reweight(rw_opts);
    if (app.got_subcommand(score)) return cmd_score(score_opts);
    if (app.got_subcommand(sweep)) return cmd_sweep(sweep_opts);
    if (app.got_subcommand(verify)) return cmd_verify(verify_opts);
    if (app.got_subcommand(rerender)) return cmd_render(render_opts);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
