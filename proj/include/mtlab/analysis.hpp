#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>

#include "mtlab/closed_form.hpp"
#include "mtlab/matrix.hpp"
#include "mtlab/model.hpp"
#include "mtlab/task.hpp"
#include "mtlab/trainer.hpp"

namespace mtlab {

// Similarity of two covariate matrices through their covariances. Each
// covariance X'X is truncated to the smallest rank holding `energy` of its
// singular-value sum; with S_j the truncated square root, the score is
// ||S1' S2||_F / (||S1||_F ||S2||_F). Always in [0, 1] by Cauchy-Schwarz:
// 1 for identical rank-one covariances, 0 for orthogonal eigenspaces.
// Identical inputs with a flat rank-q spectrum score 1/sqrt(q), so the
// score rewards spectral concentration along with alignment. Invariant
// under left rotation of either input and under a common right rotation
// of both.
double covariance_similarity_score(const DenseMatrix& x1, const DenseMatrix& x2,
                                   double energy = 0.99);

// Paired co-training vs single-task comparison on the target's validation
// split. Both runs start from the same shared-module init (and the target
// head init), train with the same config, and report the metric on the same
// rows: negative mean squared error for regression, accuracy for
// classification. gap > 0 means co-training helped. When the config enables
// alignment training both runs train alignments, so the gap measures what
// the source contributes and not what the extra parameters buy on the
// target alone. Unless the config carries explicit per-task weights, the
// source task is weighted by (target train rows / source train rows) so the
// two tasks pull on the shared module with comparable force whatever their
// sizes.
struct TransferGapResult {
  double gap = 0.0;
  double mtl_metric = 0.0;
  double stl_metric = 0.0;
  // Rank correlation between predictions and labels on the validation split,
  // reported alongside the headline metric for regression tasks.
  double mtl_spearman = 0.0;
  double stl_spearman = 0.0;
  // The trained co-training model, kept so callers can inspect the shared
  // module or the learned alignments.
  MTLModel mtl_model;
};

// Metric of one task head on the given rows: accuracy (threshold 0.5) for
// classification, negative mean squared error for regression.
double task_metric(const MTLModel& model, std::size_t task, const DenseMatrix& x,
                   const Vec& y, TaskKind kind);

TransferGapResult transfer_gap(const TaskDataset& source, const TaskDataset& target,
                               std::size_t r, const TrainConfig& cfg);

// Evaluation of the r = 1 recovery bound
//   ||B a_t - theta_t|| / ||theta_t|| <= 6c + (1/(1-3c)) ||eps|| / ||X theta_t||
// with c = cond(X_target) * sin(theta_source, theta_target). The bound only
// applies when c <= 1/3; instances past that are flagged, never asserted.
// Both tasks must carry ground-truth coefficients.
struct Theorem1Report {
  double c = 0.0;
  double kappa = 0.0;
  double sin_theta = 0.0;
  double noise_ratio = 0.0;  // ||eps|| / ||X theta_t|| on the target train rows
  double lhs = 0.0;
  double rhs = 0.0;
  bool assumption_ok = false;  // c <= 1/3 and cond(X) finite
  bool satisfied = false;      // assumption_ok and lhs <= rhs + 1e-6
};

Theorem1Report theorem1_check(const TaskDataset& source, const TaskDataset& target,
                              const MTLModel& solution);

// Checks |sin(Xa, Xb)| >= sin(a, b) / cond(X)^2 with 1e-12 slack. Inputs are
// normalized internally (both sides are scale invariant). If Xa or Xb
// vanishes the angle is undefined and the report is flagged degenerate.
struct SinContractionReport {
  double lhs = 0.0;  // |sin(Xa, Xb)|
  double rhs = 0.0;  // sin(a, b) / cond(X)^2
  double kappa = 0.0;
  bool degenerate = false;
  bool holds = false;
};

SinContractionReport sin_contraction_check(const DenseMatrix& x, const Vec& a,
                                           const Vec& b);

// Sine of the angle between a rank-one shared module and a target direction.
double angle_to_target(const DenseMatrix& b, const Vec& theta);

// Spearman rank correlation with tie-averaged ranks. Returns 0 when either
// input has no rank variation.
double spearman(const Vec& a, const Vec& b);

// Greedy orthogonalization diagnostic: repeatedly extract the best shared
// direction, record its captured energy, and project it out of every task's
// covariates. Prefix sums of the captured energies upper-bound what a
// capacity-r shared module can leave on the table.
struct GreedyDiagnostic {
  Vec lambdas;                   // energy captured per round, d entries
  double total_energy = 0.0;     // sum_i ||y_i||^2
  double stl_energy = 0.0;       // sum_i ||proj_{col(X_i)} y_i||^2
  // Upper bound on the minimum co-training loss at capacity r.
  double loss_bound(std::size_t r) const;
};

GreedyDiagnostic greedy_capacity_diagnostic(const std::vector<DataRef>& tasks,
                                            std::uint64_t seed = 0);

void to_json(nlohmann::json& j, const TransferGapResult& r);
void to_json(nlohmann::json& j, const Theorem1Report& r);
void to_json(nlohmann::json& j, const SinContractionReport& r);

}  // namespace mtlab
