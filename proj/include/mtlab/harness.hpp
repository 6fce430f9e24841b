#ifndef MTLAB_HARNESS_HPP
#define MTLAB_HARNESS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlab/matrix.hpp"
#include "mtlab/trainer.hpp"

namespace mtlab {

// Each kind sweeps one knob (the grid) over a family of synthetic instances:
//   sample_sweep          source sample count vs. transfer gap
//   cosine_sweep          coefficient cosine vs. transfer gap
//   capacity_sweep        shared-module capacity vs. total training error
//   alignment_correction  source sample count vs. gap with/without alignment
//   noise_reweighting     label-flip fraction vs. accuracy per weighting rule
//   theory_verify         coefficient angle vs. recovery-bound diagnostics
enum class ExperimentKind {
  sample_sweep,
  cosine_sweep,
  capacity_sweep,
  alignment_correction,
  noise_reweighting,
  theory_verify,
};

enum class WeightScheme { uniform, svd, uncertainty };

const char* to_string(ExperimentKind kind);
const char* to_string(WeightScheme scheme);
ExperimentKind experiment_kind_from(const std::string& name);
WeightScheme weight_scheme_from(const std::string& name);

// Recipe for the synthetic instances, shared by all kinds; each kind reads
// the fields it needs. Source/target coefficients are unit vectors at the
// requested cosine. With kappa > 1 covariates are shaped so that `boost_count`
// rotated directions carry variance kappa^2: the target always uses rotation
// Q1 boosting coordinate block S1, and the source either reuses them ("same"),
// draws an independent rotation Q2 boosting a disjoint block S2 ("different"),
// or stays isotropic ("plain").
struct GeneratorSpec {
  std::size_t d = 10;
  double cos = 0.96;
  double kappa = 1.0;
  std::size_t boost_count = 0;  // 0 means d / 10, at least 1
  std::string source_covariance = "plain";
  std::size_t target_m_train = 0;
  std::size_t target_m_val = 0;
  std::size_t source_m = 0;
  double source_sigma = 0.0;
  double target_sigma = 0.0;
  // capacity_sweep: task count, rows per task, and whether to use the exact
  // identity-design construction (X_i = I, y_i = e_i) instead of random tasks.
  std::size_t tasks = 4;
  std::size_t task_m = 40;
  bool orthogonal = false;
  // noise_reweighting: each selected row flips with this probability.
  double flip_prob = 0.5;
  // theory_verify: random triples checked against the sine contraction bound.
  std::size_t contraction_triples = 50;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::sample_sweep;
  // Swept values: source sample counts, cosines, capacities, flip fractions,
  // or coefficient sines, depending on the kind.
  Vec grid;
  std::vector<std::uint64_t> seeds;
  std::size_t capacity = 1;
  WeightScheme weighting = WeightScheme::uniform;
  std::size_t workers = 1;
  TrainConfig train;
  GeneratorSpec generator;

  void validate() const;
};

// Strict parse: unknown fields at any level are rejected, as are wrongly
// typed values. `train.seed` and `train.weights` are not accepted; the
// harness derives per-cell seeds from the `seeds` list and weights from the
// `weighting` scheme.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// One (grid value, seed) instance. `values` holds the kind's metrics by
// name; on a recorded failure (divergence or numerical breakdown) `values`
// is empty and `error` carries the message.
struct CellResult {
  double grid_value = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> values;
  std::string error;
};

// Per-grid-point mean and standard error of the mean over the non-failed
// cells, keyed like CellResult::values.
struct AggregatePoint {
  double grid_value = 0.0;
  std::size_t count = 0;
  std::map<std::string, double> mean;
  std::map<std::string, double> se;
};

struct ExperimentResult {
  ExperimentConfig config;
  // Complete grid x seeds coverage, grid-major with seeds innermost.
  std::vector<CellResult> cells;
  std::vector<AggregatePoint> aggregates;
};

std::vector<AggregatePoint> aggregate(const Vec& grid,
                                      const std::vector<CellResult>& cells);

// Runs every cell, on `workers` threads when workers > 1 (cell kernels then
// run single-threaded, so the outcome is identical to a serial run and
// independent of the worker count). A diverged cell is recorded, not fatal.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Writes results.csv (one row per cell, 17 significant digits), summary.json
// (config echo plus aggregates), and chart.svg (one line per metric with
// error bars at one standard error). Output depends only on the result
// contents, so re-rendering a loaded result reproduces every file byte for
// byte.
void render(const ExperimentResult& result, const std::string& out_dir);

// Rebuilds a result from a rendered directory; aggregates are recomputed
// from the raw cells.
ExperimentResult load_result(const std::string& dir);

}  // namespace mtlab

#endif
