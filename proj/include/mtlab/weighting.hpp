#ifndef MTLAB_WEIGHTING_HPP
#define MTLAB_WEIGHTING_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "mtlab/model.hpp"
#include "mtlab/task.hpp"
#include "mtlab/trainer.hpp"

namespace mtlab {

struct ReweightOptions {
  // Explicit subspace rank; when absent, the smallest rank holding `energy`
  // of the squared singular value mass of the stacked estimates.
  std::optional<std::size_t> rank;
  double energy = 0.95;
  // Replace the correlation estimate X^T y with the least-squares pinv(X) y.
  bool use_least_squares = false;
};

struct ReweightResult {
  WeightVector weights;
  std::size_t rank_used = 0;
  // Singular values of the d x k stacked-estimate matrix, descending.
  Vec spectrum;
};

// Spectral task weighting: per-task parameter estimates theta_i = X_i^T y_i
// are stacked into a d x k matrix, a rank-r principal subspace U_r is taken
// from its SVD, and alpha_i = ||U_r^T theta_i||. Tasks whose estimates align
// with the shared subspace get large weights; outlier tasks project weakly
// and are down-weighted.
ReweightResult svd_reweight(const std::vector<const TaskDataset*>& tasks,
                            const ReweightOptions& opts = {});

struct UncertaintyConfig {
  TrainConfig train;
  double sigma_init = 1.0;
  // Separate step size for the log-sigma parameters; 0 means reuse train.lr.
  double sigma_lr = 0.0;
  double sigma_floor = 1e-8;
  // Train only the noise parameters, leaving the model untouched.
  bool freeze_model = false;
};

struct UncertaintyResult {
  MTLModel model;
  Vec sigma;
  // Effective data-term weights 1 / (2 sigma_i^2).
  WeightVector weights;
  // Full objective sum_i [ L_i / (2 sigma_i^2) + log sigma_i ] per epoch,
  // entry 0 before any update.
  Vec penalized_trace;
  bool clamped = false;
};

// Homoscedastic-uncertainty weighting: each task carries a learned noise
// scale sigma_i and the loss becomes
//   sum_i [ ||res_i||^2 / (2 sigma_i^2) + log sigma_i ],
// optimized by SGD in log space alongside the model. Each batch carries a
// |batch| / m_i share of its task's log-sigma penalty so one epoch sums to
// the full objective. At stationarity sigma_i^2 equals the task's train
// loss.
UncertaintyResult uncertainty_weights(const MTLModel& init,
                                      const std::vector<const TaskDataset*>& tasks,
                                      const UncertaintyConfig& cfg);

}  // namespace mtlab

#endif
