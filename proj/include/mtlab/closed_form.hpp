#ifndef MTLAB_CLOSED_FORM_HPP
#define MTLAB_CLOSED_FORM_HPP

#include <cstdint>
#include <vector>

#include "mtlab/model.hpp"
#include "mtlab/task.hpp"

namespace mtlab {

// Least-squares single-task estimate pinv(X) y on the task's train rows.
Vec stl_solve(const TaskDataset& task);

// Optimal head for a fixed shared module on the task's train rows:
// A = pinv(X B) y (equivalently (B^T X^T X B)^+ B^T X^T y).
Vec head_given_b(const TaskDataset& task, const DenseMatrix& b);

// Value of the projection form of the linear MTL objective at shared module
// b (d x r): sum_i alpha_i ||P_{col(X_i b)} y_i||^2. Maximizing this over b
// is equivalent to minimizing the squared loss with optimal heads, via
//   min loss = sum_i alpha_i ||y_i||^2 - reduced_objective.
double reduced_objective(const DenseMatrix& b, const std::vector<DataRef>& tasks,
                         const WeightVector& weights);

// The no-transfer optimum for r >= k: column i of B is theta_i normalized,
// head i selects and rescales it, so B A_i = theta_i exactly.
MTLModel capacity_construction(const std::vector<Vec>& thetas, std::size_t r);

struct ClosedFormSolution {
  MTLModel model;
  // Eigenvalues of the aggregated projection matrix, descending.
  Vec spectrum;
  // Analytic optimum sum_i alpha_i ||y_i||^2 - sum_{j<=r} spectrum[j].
  double objective_value = 0.0;
  // True when the spectrum is (nearly) tied at the rank cut, i.e. the
  // optimal shared span is not unique.
  bool tie_at_cut = false;
};

// Exact optimum when every task covariance X_i^T X_i agrees (within 1e-8
// relative Frobenius, checked pairwise against task 0). Shared module is
// V D^+ C with C the top-r eigenvectors of sum_i alpha_i z_i z_i^T,
// z_i = U_i^T y_i in the common right-singular frame of task 0.
ClosedFormSolution solve_equal_covariance(const std::vector<const TaskDataset*>& tasks,
                                          const WeightVector& weights, std::size_t r);

// Exact optimum for tasks sharing one covariate matrix X (full column rank
// required, r <= k). Returns the orthonormalized representative of the
// optimal span.
ClosedFormSolution solve_same_covariates(const DenseMatrix& x,
                                         const std::vector<Vec>& labels,
                                         const WeightVector& weights, std::size_t r);

struct Rank1AscentOptions {
  std::size_t restarts = 3;
  std::size_t max_iters = 500;
  std::uint64_t seed = 0;
  std::vector<Vec> warm_starts;
};

// Numerical maximizer of the rank-1 reduced objective over the unit sphere
// (great-circle ascent with backtracking, best of all starts). Used where no
// closed form applies.
Vec best_rank1_shared(const std::vector<DataRef>& tasks, const WeightVector& weights,
                      const Rank1AscentOptions& opts);

}  // namespace mtlab

#endif
