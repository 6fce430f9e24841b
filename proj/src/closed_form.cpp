#include "mtlab/closed_form.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"

namespace mtlab {

namespace {

using kernels::dot;
using kernels::frobenius;
using kernels::gram;
using kernels::madd;
using kernels::matmul;
using kernels::matvec;
using kernels::matvec_t;
using kernels::scale;

// Squared norm of the projection of y onto col(W).
double projection_energy(const DenseMatrix& w, const Vec& y) {
  SvdResult dec = svd(w);
  const double tol = kPinvRelTol * (dec.sigma.empty() ? 0.0 : dec.sigma[0]);
  double energy = 0.0;
  for (std::size_t j = 0; j < dec.sigma.size(); ++j) {
    if (dec.sigma[j] <= tol) continue;
    double c = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) c += dec.u(i, j) * y[i];
    energy += c * c;
  }
  return energy;
}

}  // namespace

Vec stl_solve(const TaskDataset& task) {
  auto [x, y] = task.train_data();
  return pinv_apply(x, y);
}

Vec head_given_b(const TaskDataset& task, const DenseMatrix& b) {
  auto [x, y] = task.train_data();
  if (b.rows() != x.cols())
    throw ArgumentError("head_given_b: shared module rows " + std::to_string(b.rows()) +
                        " do not match task dimension " + std::to_string(x.cols()));
  DenseMatrix xb = matmul(x, b);
  return pinv_apply(xb, y);
}

double reduced_objective(const DenseMatrix& b, const std::vector<DataRef>& tasks,
                         const WeightVector& weights) {
  if (tasks.size() != weights.alpha.size())
    throw ArgumentError("reduced_objective: " + std::to_string(tasks.size()) + " tasks but " +
                        std::to_string(weights.alpha.size()) + " weights");
  weights.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (weights.alpha[i] == 0.0) continue;
    const DenseMatrix& x = *tasks[i].x;
    if (x.cols() != b.rows())
      throw ArgumentError("reduced_objective: task " + std::to_string(i) + " has dimension " +
                          std::to_string(x.cols()) + ", shared module expects " +
                          std::to_string(b.rows()));
    DenseMatrix xb = matmul(x, b);
    total += weights.alpha[i] * projection_energy(xb, *tasks[i].y);
  }
  return total;
}

MTLModel capacity_construction(const std::vector<Vec>& thetas, std::size_t r) {
  if (thetas.empty()) throw ArgumentError("capacity_construction: no task parameters given");
  const std::size_t k = thetas.size();
  const std::size_t d = thetas[0].size();
  if (d == 0) throw ArgumentError("capacity_construction: zero-dimensional parameters");
  if (r < k)
    throw ArgumentError("capacity_construction: capacity " + std::to_string(r) +
                        " below task count " + std::to_string(k));
  for (std::size_t i = 1; i < k; ++i)
    if (thetas[i].size() != d)
      throw ArgumentError("capacity_construction: parameter " + std::to_string(i) +
                          " has length " + std::to_string(thetas[i].size()) + ", expected " +
                          std::to_string(d));

  MTLModel model;
  model.activation = Activation::linear;
  model.shared = DenseMatrix(d, r);
  model.heads.assign(k, Vec(r, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    const double norm = std::sqrt(dot(thetas[i], thetas[i]));
    if (norm == 0.0) continue;  // zero column, zero head: B A_i = 0 = theta_i
    for (std::size_t row = 0; row < d; ++row) model.shared(row, i) = thetas[i][row] / norm;
    model.heads[i][i] = norm;
  }
  model.validate();
  return model;
}

ClosedFormSolution solve_equal_covariance(const std::vector<const TaskDataset*>& tasks,
                                          const WeightVector& weights, std::size_t r) {
  if (tasks.empty()) throw ArgumentError("solve_equal_covariance: no tasks given");
  if (tasks.size() != weights.alpha.size())
    throw ArgumentError("solve_equal_covariance: " + std::to_string(tasks.size()) +
                        " tasks but " + std::to_string(weights.alpha.size()) + " weights");
  weights.validate();

  const std::size_t k = tasks.size();
  std::vector<DenseMatrix> xs;
  std::vector<Vec> ys;
  xs.reserve(k);
  ys.reserve(k);
  for (const TaskDataset* t : tasks) {
    auto [x, y] = t->train_data();
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }
  const std::size_t d = xs[0].cols();
  if (r < 1 || r > d)
    throw ArgumentError("solve_equal_covariance: capacity " + std::to_string(r) +
                        " outside [1, " + std::to_string(d) + "]");

  DenseMatrix g0 = gram(xs[0]);
  const double g0_norm = frobenius(g0);
  for (std::size_t i = 1; i < k; ++i) {
    if (xs[i].cols() != d)
      throw ArgumentError("solve_equal_covariance: task " + std::to_string(i) +
                          " has dimension " + std::to_string(xs[i].cols()) + ", expected " +
                          std::to_string(d));
    DenseMatrix diff = gram(xs[i]);
    madd(-1.0, g0, diff);
    const double rel = frobenius(diff) / (g0_norm > 0.0 ? g0_norm : 1.0);
    if (rel > 1e-8)
      throw ArgumentError("solve_equal_covariance: covariance of task " + std::to_string(i) +
                          " differs from task 0 by relative " + std::to_string(rel));
  }

  // One SVD fixes the right-singular frame; per-task left frames are derived
  // from it so signs and degenerate subspaces stay consistent across tasks.
  SvdResult base = svd(xs[0]);
  const DenseMatrix& v = base.v;
  const Vec& sigma = base.sigma;
  const std::size_t nsig = sigma.size();
  const double sig_tol = kPinvRelTol * (nsig ? sigma[0] : 0.0);

  // z_i = U_i^T y_i with U_i = X_i V D^+, i.e. z_i[j] = v_j^T X_i^T y_i / sigma_j.
  DenseMatrix m(d, d);
  for (std::size_t i = 0; i < k; ++i) {
    Vec vty = matvec_t(xs[i], ys[i]);
    Vec z(d, 0.0);
    for (std::size_t j = 0; j < nsig; ++j) {
      if (sigma[j] <= sig_tol) continue;
      double c = 0.0;
      for (std::size_t row = 0; row < d; ++row) c += v(row, j) * vty[row];
      z[j] = c / sigma[j];
    }
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) m(a, b) += weights.alpha[i] * z[a] * z[b];
  }

  SvdResult eig = svd(m);
  ClosedFormSolution sol;
  sol.spectrum = eig.sigma;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += weights.alpha[i] * dot(ys[i], ys[i]);
  double captured = 0.0;
  for (std::size_t j = 0; j < r && j < eig.sigma.size(); ++j) captured += eig.sigma[j];
  sol.objective_value = total - captured;
  if (r < eig.sigma.size() && eig.sigma[r - 1] > 0.0) {
    const double gap = (eig.sigma[r - 1] - eig.sigma[r]) / eig.sigma[r - 1];
    sol.tie_at_cut = gap < 1e-9;
  }

  // B = V D^+ C_r.
  DenseMatrix b(d, r);
  for (std::size_t col = 0; col < r; ++col)
    for (std::size_t row = 0; row < d; ++row) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nsig; ++j) {
        if (sigma[j] <= sig_tol) continue;
        acc += v(row, j) * eig.u(j, col) / sigma[j];
      }
      b(row, col) = acc;
    }

  sol.model.activation = Activation::linear;
  sol.model.shared = std::move(b);
  sol.model.heads.resize(k);
  for (std::size_t i = 0; i < k; ++i)
    sol.model.heads[i] = head_given_b(*tasks[i], sol.model.shared);
  sol.model.validate();
  return sol;
}

ClosedFormSolution solve_same_covariates(const DenseMatrix& x, const std::vector<Vec>& labels,
                                         const WeightVector& weights, std::size_t r) {
  if (labels.empty()) throw ArgumentError("solve_same_covariates: no label vectors given");
  if (labels.size() != weights.alpha.size())
    throw ArgumentError("solve_same_covariates: " + std::to_string(labels.size()) +
                        " label vectors but " + std::to_string(weights.alpha.size()) +
                        " weights");
  weights.validate();
  const std::size_t k = labels.size();
  const std::size_t mrows = x.rows();
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < k; ++i)
    if (labels[i].size() != mrows)
      throw ArgumentError("solve_same_covariates: label vector " + std::to_string(i) +
                          " has length " + std::to_string(labels[i].size()) + ", expected " +
                          std::to_string(mrows));
  if (r < 1 || r > k)
    throw ArgumentError("solve_same_covariates: capacity " + std::to_string(r) +
                        " outside [1, " + std::to_string(k) + "]");

  SvdResult dec = svd(x);
  const double sig_tol = kPinvRelTol * (dec.sigma.empty() ? 0.0 : dec.sigma[0]);
  std::size_t rank = 0;
  for (double s : dec.sigma)
    if (s > sig_tol) ++rank;
  if (rank < d)
    throw ArgumentError("solve_same_covariates: covariate matrix is rank " +
                        std::to_string(rank) + " < " + std::to_string(d) +
                        ", full column rank required");

  // M = sum_i alpha_i z_i z_i^T with z_i = U^T y_i.
  DenseMatrix m(d, d);
  for (std::size_t i = 0; i < k; ++i) {
    Vec z(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      double c = 0.0;
      for (std::size_t row = 0; row < mrows; ++row) c += dec.u(row, j) * labels[i][row];
      z[j] = c;
    }
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) m(a, b) += weights.alpha[i] * z[a] * z[b];
  }

  SvdResult eig = svd(m);
  ClosedFormSolution sol;
  sol.spectrum = eig.sigma;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += weights.alpha[i] * dot(labels[i], labels[i]);
  double captured = 0.0;
  for (std::size_t j = 0; j < r && j < eig.sigma.size(); ++j) captured += eig.sigma[j];
  sol.objective_value = total - captured;
  if (r < eig.sigma.size() && eig.sigma[r - 1] > 0.0) {
    const double gap = (eig.sigma[r - 1] - eig.sigma[r]) / eig.sigma[r - 1];
    sol.tie_at_cut = gap < 1e-9;
  }

  // Raw representative V D^{-1} Q_r, then orthonormalize so callers get a
  // canonical basis of the optimal span.
  DenseMatrix raw(d, r);
  for (std::size_t col = 0; col < r; ++col)
    for (std::size_t row = 0; row < d; ++row) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += dec.v(row, j) * eig.u(j, col) / dec.sigma[j];
      raw(row, col) = acc;
    }
  DenseMatrix basis = orthonormal_basis(raw);
  if (basis.cols() != r)
    throw NumericalError("solve_same_covariates: optimal span collapsed to rank " +
                         std::to_string(basis.cols()) + " < " + std::to_string(r));

  sol.model.activation = Activation::linear;
  sol.model.shared = std::move(basis);
  sol.model.heads.resize(k);
  DenseMatrix xb = matmul(x, sol.model.shared);
  for (std::size_t i = 0; i < k; ++i) sol.model.heads[i] = pinv_apply(xb, labels[i]);
  sol.model.validate();
  return sol;
}

namespace {

// Reduced objective restricted to a rank-1 shared direction.
double rank1_value(const Vec& b, const std::vector<DataRef>& tasks,
                   const WeightVector& weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (weights.alpha[i] == 0.0) continue;
    Vec xb = matvec(*tasks[i].x, b);
    const double nn = dot(xb, xb);
    if (nn <= 0.0) continue;
    const double c = dot(xb, *tasks[i].y);
    total += weights.alpha[i] * c * c / nn;
  }
  return total;
}

// Euclidean gradient of rank1_value:
//   d/db [ (b'X'y)^2 / (b'X'Xb) ] = (2c X'y nn - 2 c^2 X'X b) / nn^2.
Vec rank1_grad(const Vec& b, const std::vector<DataRef>& tasks, const WeightVector& weights) {
  Vec grad(b.size(), 0.0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (weights.alpha[i] == 0.0) continue;
    const DenseMatrix& x = *tasks[i].x;
    Vec xb = matvec(x, b);
    const double nn = dot(xb, xb);
    if (nn <= 0.0) continue;
    const double c = dot(xb, *tasks[i].y);
    Vec xty = matvec_t(x, *tasks[i].y);
    Vec xtxb = matvec_t(x, xb);
    const double w = weights.alpha[i];
    for (std::size_t j = 0; j < b.size(); ++j)
      grad[j] += w * (2.0 * c * xty[j] * nn - 2.0 * c * c * xtxb[j]) / (nn * nn);
  }
  return grad;
}

}  // namespace

Vec best_rank1_shared(const std::vector<DataRef>& tasks, const WeightVector& weights,
                      const Rank1AscentOptions& opts) {
  if (tasks.empty()) throw ArgumentError("best_rank1_shared: no tasks given");
  if (tasks.size() != weights.alpha.size())
    throw ArgumentError("best_rank1_shared: " + std::to_string(tasks.size()) + " tasks but " +
                        std::to_string(weights.alpha.size()) + " weights");
  weights.validate();
  const std::size_t d = tasks[0].x->cols();
  for (const DataRef& t : tasks)
    if (t.x->cols() != d)
      throw ArgumentError("best_rank1_shared: inconsistent task dimensions");

  std::vector<Vec> starts = opts.warm_starts;
  for (Vec& s : starts) {
    if (s.size() != d)
      throw ArgumentError("best_rank1_shared: warm start has length " +
                          std::to_string(s.size()) + ", expected " + std::to_string(d));
    const double n = std::sqrt(dot(s, s));
    if (n == 0.0) throw ArgumentError("best_rank1_shared: zero warm start");
    scale(1.0 / n, s);
  }
  Rng rng(opts.seed);
  for (std::size_t t = 0; t < opts.restarts; ++t) starts.push_back(random_unit_vector(d, rng));
  if (starts.empty()) throw ArgumentError("best_rank1_shared: no starting points");

  Vec best;
  double best_val = -1.0;
  for (const Vec& start : starts) {
    Vec b = start;
    double val = rank1_value(b, tasks, weights);
    for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
      Vec g = rank1_grad(b, tasks, weights);
      const double gb = dot(g, b);
      for (std::size_t j = 0; j < d; ++j) g[j] -= gb * b[j];  // tangent component
      const double gnorm = std::sqrt(dot(g, g));
      if (gnorm < 1e-13 * (1.0 + std::fabs(val))) break;

      // Great-circle step with backtracking: cand = cos(t) b + sin(t) u.
      Vec u = g;
      scale(1.0 / gnorm, u);
      double step = 1.0;
      bool moved = false;
      for (int bt = 0; bt < 40; ++bt) {
        const double angle = std::min(step * gnorm, 1.0);
        const double ca = std::cos(angle), sa = std::sin(angle);
        Vec cand(d);
        for (std::size_t j = 0; j < d; ++j) cand[j] = ca * b[j] + sa * u[j];
        const double cand_val = rank1_value(cand, tasks, weights);
        if (cand_val > val + 1e-16 * std::fabs(val)) {
          b = std::move(cand);
          val = cand_val;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    if (val > best_val) {
      best_val = val;
      best = b;
    }
  }
  return best;
}

}  // namespace mtlab
