#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtlab/closed_form.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"
#include "mtlab/task.hpp"

using namespace mtlab;

namespace {

// Independent least-squares oracle: form the normal equations and solve them
// by Gaussian elimination with partial pivoting.
Vec solve_normal_equations(const DenseMatrix& x, const Vec& y) {
  const std::size_t d = x.cols();
  DenseMatrix a = kernels::gram(x);
  Vec b = kernels::matvec_t(x, y);
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t row = col + 1; row < d; ++row)
      if (std::abs(a(row, col)) > std::abs(a(piv, col))) piv = row;
    if (piv != col) {
      for (std::size_t j = 0; j < d; ++j) std::swap(a(col, j), a(piv, j));
      std::swap(b[col], b[piv]);
    }
    REQUIRE(std::abs(a(col, col)) > 1e-12);
    for (std::size_t row = col + 1; row < d; ++row) {
      const double f = a(row, col) / a(col, col);
      for (std::size_t j = col; j < d; ++j) a(row, j) -= f * a(col, j);
      b[row] -= f * b[col];
    }
  }
  Vec out(d, 0.0);
  for (std::size_t col = d; col-- > 0;) {
    double s = b[col];
    for (std::size_t j = col + 1; j < d; ++j) s -= a(col, j) * out[j];
    out[col] = s / a(col, col);
  }
  return out;
}

TaskDataset random_regression(std::size_t m, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix x = gaussian_matrix(m, d, rng);
  Vec y = rng.gaussian_vec(m);
  return make_task(std::move(x), std::move(y), TaskKind::regression);
}

double weighted_residual(const DenseMatrix& x, const Vec& y, const DenseMatrix& b,
                         const Vec& head) {
  Vec pred = kernels::matvec(kernels::matmul(x, b), head);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = pred[i] - y[i];
    s += r * r;
  }
  return s;
}

}  // namespace

TEST_CASE("stl_solve matches the normal-equations oracle") {
  TaskDataset t = random_regression(80, 6, 4);
  Vec got = stl_solve(t);
  Vec want = solve_normal_equations(t.x, t.y);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-8));
}

TEST_CASE("stl_solve recovers the generator exactly without noise") {
  Vec theta{2.0, -0.5, 1.0, 0.25};
  TaskDataset t = gen_linear_task(theta, 60, 0.0, nullptr, 8);
  Vec got = stl_solve(t);
  for (std::size_t i = 0; i < theta.size(); ++i)
    CHECK(got[i] == doctest::Approx(theta[i]).epsilon(1e-10));
}

TEST_CASE("stl_solve respects the train split") {
  TaskDataset t = random_regression(50, 3, 91);
  split_dataset(t, 35, 2);
  auto [xt, yt] = t.train_data();
  Vec want = solve_normal_equations(xt, yt);
  Vec got = stl_solve(t);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-8));
}

TEST_CASE("head_given_b solves the projected problem") {
  TaskDataset t = random_regression(40, 5, 14);
  Rng rng(15);
  DenseMatrix b = gaussian_matrix(5, 2, rng);
  Vec head = head_given_b(t, b);
  DenseMatrix xb = kernels::matmul(t.x, b);
  Vec want = solve_normal_equations(xb, t.y);
  for (std::size_t i = 0; i < head.size(); ++i)
    CHECK(head[i] == doctest::Approx(want[i]).epsilon(1e-8));
  // Optimality: residual orthogonal to the column span of X B.
  Vec res = kernels::matvec(xb, head);
  for (std::size_t i = 0; i < res.size(); ++i) res[i] -= t.y[i];
  Vec gram_res = kernels::matvec_t(xb, res);
  for (double v : gram_res) CHECK(std::abs(v) < 1e-8);

  DenseMatrix wrong(4, 2, 1.0);
  CHECK_THROWS_AS(head_given_b(t, wrong), ArgumentError);
}

TEST_CASE("projected energy and residual loss are dual") {
  std::vector<TaskDataset> tasks;
  for (std::uint64_t s = 0; s < 3; ++s) tasks.push_back(random_regression(30, 4, 100 + s));
  std::vector<DataRef> refs;
  for (auto& t : tasks) refs.push_back(DataRef{&t.x, &t.y});
  WeightVector w{Vec{0.5, 1.0, 2.0}};
  Rng rng(7);
  DenseMatrix b = gaussian_matrix(4, 2, rng);

  double reduced = reduced_objective(b, refs, w);
  double norms = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    norms += w[i] * kernels::dot(tasks[i].y, tasks[i].y);
    Vec head = head_given_b(tasks[i], b);
    loss += w[i] * weighted_residual(tasks[i].x, tasks[i].y, b, head);
  }
  CHECK(norms - reduced == doctest::Approx(loss).epsilon(1e-9));
}

TEST_CASE("capacity_construction reproduces every task parameter") {
  std::vector<Vec> thetas{{1.0, 2.0, 2.0}, {0.0, -3.0, 4.0}, {0.0, 0.0, 0.0}};
  MTLModel m = capacity_construction(thetas, 4);
  CHECK(m.capacity() == 4);
  CHECK(m.task_count() == 3);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    Vec ba = kernels::matvec(m.shared, m.heads[i]);
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(ba[j] == doctest::Approx(thetas[i][j]).epsilon(1e-12));
  }
  // Columns used for nonzero tasks are unit length.
  for (std::size_t i : {0, 1}) {
    double n = 0.0;
    for (std::size_t j = 0; j < 3; ++j) n += m.shared(j, i) * m.shared(j, i);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(capacity_construction(thetas, 2), ArgumentError);
  CHECK_THROWS_AS(capacity_construction({}, 2), ArgumentError);
  CHECK_THROWS_AS(capacity_construction({Vec{1.0}, Vec{1.0, 2.0}}, 2), ArgumentError);
}

TEST_CASE("capacity_construction drives noiseless losses to zero") {
  std::vector<Vec> thetas{{1.0, -1.0, 0.5}, {2.0, 0.0, 1.0}};
  std::vector<TaskDataset> tasks;
  tasks.push_back(gen_linear_task(thetas[0], 25, 0.0, nullptr, 1));
  tasks.push_back(gen_linear_task(thetas[1], 30, 0.0, nullptr, 2));
  MTLModel m = capacity_construction(thetas, 2);
  std::vector<DataRef> refs;
  for (auto& t : tasks) refs.push_back(DataRef{&t.x, &t.y});
  CHECK(objective(m, refs, WeightVector::uniform(2)) < 1e-18);
}

TEST_CASE("equal-covariance solver on the identity instance") {
  const std::size_t d = 5;
  std::vector<TaskDataset> tasks;
  std::vector<const TaskDataset*> ptrs;
  Vec scales{2.0, 1.0, 3.0};
  for (std::size_t i = 0; i < 3; ++i) {
    Vec y(d, 0.0);
    y[i] = scales[i];
    tasks.push_back(make_task(DenseMatrix::identity(d), y, TaskKind::regression));
  }
  for (auto& t : tasks) ptrs.push_back(&t);
  WeightVector w{Vec{1.0, 4.0, 0.5}};
  // M = diag(4, 4, 4.5) on coordinates 0..2; lambda sorted: 4.5, 4, 4.
  ClosedFormSolution sol = solve_equal_covariance(ptrs, w, 1);
  const double total = 1.0 * 4.0 + 4.0 * 1.0 + 0.5 * 9.0;
  CHECK(sol.objective_value == doctest::Approx(total - 4.5).epsilon(1e-12));
  CHECK(sol.spectrum[0] == doctest::Approx(4.5).epsilon(1e-12));
  CHECK_FALSE(sol.tie_at_cut);  // 4.5 vs 4 is a clear gap

  // At r = 2 the spectrum is tied (4, 4) across the cut.
  ClosedFormSolution sol2 = solve_equal_covariance(ptrs, w, 2);
  CHECK(sol2.objective_value == doctest::Approx(total - 8.5).epsilon(1e-12));
  CHECK(sol2.tie_at_cut);

  // The returned model achieves the reported optimum.
  std::vector<DataRef> refs;
  for (auto& t : tasks) refs.push_back(DataRef{&t.x, &t.y});
  CHECK(objective(sol2.model, refs, w) == doctest::Approx(sol2.objective_value).epsilon(1e-9));
}

TEST_CASE("equal-covariance solver beats random subspaces") {
  std::vector<TaskDataset> tasks;
  std::vector<const TaskDataset*> ptrs;
  Rng rng(33);
  DenseMatrix x = gaussian_matrix(25, 4, rng);
  for (std::size_t i = 0; i < 3; ++i)
    tasks.push_back(make_task(x, rng.gaussian_vec(25), TaskKind::regression));
  for (auto& t : tasks) ptrs.push_back(&t);
  WeightVector w{Vec{1.0, 0.7, 1.4}};

  ClosedFormSolution sol = solve_equal_covariance(ptrs, w, 2);
  std::vector<DataRef> refs;
  for (auto& t : tasks) refs.push_back(DataRef{&t.x, &t.y});
  const double best = objective(sol.model, refs, w);
  CHECK(best == doctest::Approx(sol.objective_value).epsilon(1e-9));

  for (int trial = 0; trial < 200; ++trial) {
    DenseMatrix b = gaussian_matrix(4, 2, rng);
    double loss = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      Vec head = head_given_b(tasks[i], b);
      loss += w[i] * weighted_residual(tasks[i].x, tasks[i].y, b, head);
    }
    CHECK(loss >= best - 1e-9 * (1.0 + best));
  }
}

TEST_CASE("equal covariance accepts rotated copies and rejects mismatches") {
  const std::size_t d = 4;
  Rng rng(3);
  DenseMatrix x1 = gaussian_matrix(d, d, rng);
  DenseMatrix o = random_orthonormal(d, 12);
  DenseMatrix x2 = kernels::matmul(o, x1);  // same gram, different rows
  TaskDataset t1 = make_task(x1, rng.gaussian_vec(d), TaskKind::regression);
  TaskDataset t2 = make_task(x2, rng.gaussian_vec(d), TaskKind::regression);
  WeightVector w = WeightVector::uniform(2);
  ClosedFormSolution sol = solve_equal_covariance({&t1, &t2}, w, 1);

  // Duality per instance: reported optimum equals the achieved loss.
  double loss = 0.0;
  loss += weighted_residual(t1.x, t1.y, sol.model.shared, sol.model.heads[0]);
  loss += weighted_residual(t2.x, t2.y, sol.model.shared, sol.model.heads[1]);
  CHECK(loss == doctest::Approx(sol.objective_value).epsilon(1e-8));

  DenseMatrix x3 = gaussian_matrix(d, d, rng);
  TaskDataset t3 = make_task(x3, rng.gaussian_vec(d), TaskKind::regression);
  CHECK_THROWS_AS(solve_equal_covariance({&t1, &t3}, w, 1), ArgumentError);
  CHECK_THROWS_AS(solve_equal_covariance({&t1, &t2}, w, 0), ArgumentError);
  CHECK_THROWS_AS(solve_equal_covariance({&t1, &t2}, w, d + 1), ArgumentError);
  CHECK_THROWS_AS(solve_equal_covariance({}, w, 1), ArgumentError);
}

TEST_CASE("shared-covariate solver leaves k minus r on the axis instance") {
  const std::size_t d = 6, k = 4, r = 2;
  DenseMatrix x = DenseMatrix::identity(d);
  std::vector<Vec> labels;
  for (std::size_t i = 0; i < k; ++i) {
    Vec y(d, 0.0);
    y[i] = 1.0;
    labels.push_back(y);
  }
  ClosedFormSolution sol = solve_same_covariates(x, labels, WeightVector::uniform(k), r);
  CHECK(sol.objective_value == doctest::Approx(static_cast<double>(k - r)).epsilon(1e-12));
  CHECK(sol.tie_at_cut);  // all k eigenvalues are 1

  // Orthonormal representative.
  DenseMatrix gtg = kernels::gram(sol.model.shared);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      CHECK(gtg(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
}

TEST_CASE("shared-covariate solver agrees with the equal-covariance solver") {
  Rng rng(77);
  DenseMatrix x = gaussian_matrix(30, 5, rng);
  std::vector<Vec> labels;
  std::vector<TaskDataset> tasks;
  std::vector<const TaskDataset*> ptrs;
  for (std::size_t i = 0; i < 3; ++i) {
    labels.push_back(rng.gaussian_vec(30));
    tasks.push_back(make_task(x, labels.back(), TaskKind::regression));
  }
  for (auto& t : tasks) ptrs.push_back(&t);
  WeightVector w{Vec{1.0, 2.0, 0.5}};

  ClosedFormSolution a = solve_same_covariates(x, labels, w, 2);
  ClosedFormSolution b = solve_equal_covariance(ptrs, w, 2);
  CHECK(a.objective_value == doctest::Approx(b.objective_value).epsilon(1e-9));

  // Same optimal span even though the representatives differ.
  Vec cosines = principal_cosines(a.model.shared, b.model.shared);
  for (double c : cosines) CHECK(c == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("shared-covariate solver input validation") {
  Rng rng(5);
  DenseMatrix x = gaussian_matrix(10, 3, rng);
  std::vector<Vec> labels{rng.gaussian_vec(10), rng.gaussian_vec(10)};
  WeightVector w = WeightVector::uniform(2);
  CHECK_THROWS_AS(solve_same_covariates(x, labels, w, 3), ArgumentError);  // r > k
  CHECK_THROWS_AS(solve_same_covariates(x, labels, w, 0), ArgumentError);
  DenseMatrix deficient = x;
  for (std::size_t i = 0; i < 10; ++i) deficient(i, 2) = deficient(i, 1);
  CHECK_THROWS_AS(solve_same_covariates(deficient, labels, w, 1), ArgumentError);
  std::vector<Vec> ragged{rng.gaussian_vec(10), rng.gaussian_vec(9)};
  CHECK_THROWS_AS(solve_same_covariates(x, ragged, w, 1), ArgumentError);
}

TEST_CASE("rank-1 ascent reaches the grid optimum in three dimensions") {
  std::vector<TaskDataset> tasks;
  tasks.push_back(random_regression(12, 3, 61));
  tasks.push_back(random_regression(15, 3, 62));
  std::vector<DataRef> refs;
  for (auto& t : tasks) refs.push_back(DataRef{&t.x, &t.y});
  WeightVector w{Vec{1.0, 0.8}};

  auto value_at = [&](const Vec& b) {
    return reduced_objective(DenseMatrix::from_column(b), refs, w);
  };

  double grid_best = -1.0;
  Vec grid_arg(3, 0.0);
  const double step = 3.14159265358979323846 / 180.0;  // one degree
  for (double az = 0.0; az < 2.0 * 3.14159265358979323846; az += step)
    for (double el = -1.5707963267948966; el <= 1.5707963267948966; el += step) {
      Vec b{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const double v = value_at(b);
      if (v > grid_best) {
        grid_best = v;
        grid_arg = b;
      }
    }

  Rank1AscentOptions opts;
  opts.restarts = 5;
  opts.seed = 9;
  Vec best = best_rank1_shared(refs, w, opts);
  CHECK(value_at(best) >= grid_best - 1e-6 * std::abs(grid_best));

  // A warm start at the grid argmax can only help.
  Rank1AscentOptions warm;
  warm.restarts = 0;
  warm.warm_starts = {grid_arg};
  Vec refined = best_rank1_shared(refs, w, warm);
  CHECK(value_at(refined) >= grid_best - 1e-12);

  CHECK_THROWS_AS(best_rank1_shared({}, w, opts), ArgumentError);
  Rank1AscentOptions none;
  none.restarts = 0;
  CHECK_THROWS_AS(best_rank1_shared(refs, w, none), ArgumentError);
  Rank1AscentOptions zero;
  zero.warm_starts = {Vec{0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(best_rank1_shared(refs, w, zero), ArgumentError);
}
