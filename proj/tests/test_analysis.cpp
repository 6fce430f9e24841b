#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtlab/analysis.hpp"
#include "mtlab/closed_form.hpp"
#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"
#include "mtlab/task.hpp"

using namespace mtlab;

namespace {

DenseMatrix random_matrix(std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_matrix(m, n, rng);
}

// Literal evaluation of the truncated-square-root score through explicit
// covariance eigendecompositions, with no shortcuts shared with the library
// path.
double score_oracle(const DenseMatrix& x1, const DenseMatrix& x2, double energy) {
  auto factor = [&](const DenseMatrix& x) {
    SvdResult e = svd(kernels::gram(x));  // covariance eigenpairs
    double total = 0.0;
    for (double s : e.sigma) total += s;
    std::size_t r = 1;
    double acc = e.sigma[0];
    while (acc < energy * total && r < e.sigma.size()) acc += e.sigma[r++];
    DenseMatrix f(x.cols(), r);
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t i = 0; i < x.cols(); ++i)
        f(i, j) = e.u(i, j) * std::sqrt(e.sigma[j]);
    return f;
  };
  DenseMatrix f1 = factor(x1), f2 = factor(x2);
  return kernels::frobenius(kernels::matmul_at_b(f1, f2)) /
         (kernels::frobenius(f1) * kernels::frobenius(f2));
}

MTLModel rank1_solution(const Vec& direction, const TaskDataset& source,
                        const TaskDataset& target) {
  MTLModel m;
  m.shared = DenseMatrix::from_column(direction);
  m.heads = {head_given_b(source, m.shared), head_given_b(target, m.shared)};
  m.activation = Activation::linear;
  return m;
}

}  // namespace

TEST_CASE("identical rank-one covariates score 1") {
  Rng rng(3);
  Vec u = rng.gaussian_vec(8), v = rng.gaussian_vec(5);
  DenseMatrix x(8, 5);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 5; ++j) x(i, j) = u[i] * v[j];
  CHECK(covariance_similarity_score(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonal covariance eigenspaces score 0") {
  Rng rng(4);
  DenseMatrix x1(10, 6), x2(10, 6);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 2; ++j) x1(i, j) = rng.gaussian();
    for (std::size_t j = 2; j < 4; ++j) x2(i, j) = rng.gaussian();
  }
  CHECK(covariance_similarity_score(x1, x2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("score matches the full-eigendecomposition oracle") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull}) {
    DenseMatrix x1 = random_matrix(12, 4, seed);
    DenseMatrix x2 = random_matrix(9, 4, seed + 50);
    const double got = covariance_similarity_score(x1, x2);
    const double want = score_oracle(x1, x2, 0.99);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("score invariances: left rotation and common right rotation") {
  DenseMatrix x1 = random_matrix(14, 5, 21);
  DenseMatrix x2 = random_matrix(11, 5, 22);
  const double base = covariance_similarity_score(x1, x2);

  DenseMatrix p1 = random_orthonormal(14, 77);
  DenseMatrix p2 = random_orthonormal(11, 78);
  CHECK(covariance_similarity_score(kernels::matmul(p1, x1), x2) ==
        doctest::Approx(base).epsilon(1e-10));
  CHECK(covariance_similarity_score(x1, kernels::matmul(p2, x2)) ==
        doctest::Approx(base).epsilon(1e-10));

  DenseMatrix q = random_orthonormal(5, 79);
  CHECK(covariance_similarity_score(kernels::matmul(x1, q), kernels::matmul(x2, q)) ==
        doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("score rejects zero matrices and bad arguments") {
  DenseMatrix z(4, 3);
  DenseMatrix x = random_matrix(4, 3, 5);
  CHECK_THROWS_AS(covariance_similarity_score(z, x), ArgumentError);
  CHECK_THROWS_AS(covariance_similarity_score(x, z), ArgumentError);
  CHECK_THROWS_AS(covariance_similarity_score(x, random_matrix(4, 2, 6)),
                  ArgumentError);
  CHECK_THROWS_AS(covariance_similarity_score(x, x, 0.0), ArgumentError);
  CHECK_THROWS_AS(covariance_similarity_score(x, x, 1.5), ArgumentError);
}

TEST_CASE("co-training an exact copy of the target changes nothing measurable") {
  Rng rng(31);
  Vec theta = rng.gaussian_vec(4);
  TaskDataset target = gen_linear_task(theta, 400, 0.0, nullptr, 311);
  split_dataset(target, 300, 312);
  TaskDataset source = target;

  TrainConfig cfg;
  cfg.lr = 5e-4;
  cfg.epochs = 400;
  cfg.batch_size = 300;
  cfg.seed = 9;
  TransferGapResult r = transfer_gap(source, target, 2, cfg);
  CHECK(std::abs(r.gap) <= 1e-3);
  CHECK(r.mtl_metric <= 0.0);
  CHECK(r.stl_metric <= 0.0);
  CHECK(r.mtl_spearman == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("transfer gap is deterministic for a fixed config") {
  Rng rng(32);
  Vec theta = rng.gaussian_vec(5);
  TaskDataset target = gen_linear_task(theta, 80, 0.5, nullptr, 321);
  split_dataset(target, 60, 322);
  TaskDataset source = gen_linear_task(theta, 120, 0.5, nullptr, 323);

  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 40;
  cfg.batch_size = 20;
  cfg.seed = 5;
  TransferGapResult a = transfer_gap(source, target, 2, cfg);
  TransferGapResult b = transfer_gap(source, target, 2, cfg);
  CHECK(a.gap == b.gap);
  CHECK(a.mtl_metric == b.mtl_metric);
  CHECK(a.stl_metric == b.stl_metric);
}

TEST_CASE("transfer gap handles classification targets with accuracy") {
  Rng rng(33);
  Vec theta = rng.gaussian_vec(6);
  TaskDataset target = gen_logistic_task(theta, 200, 331);
  split_dataset(target, 150, 332);
  TaskDataset source = gen_logistic_task(theta, 300, 333);

  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.epochs = 60;
  cfg.batch_size = 150;
  cfg.seed = 7;
  TransferGapResult r = transfer_gap(source, target, 2, cfg);
  CHECK(r.mtl_metric >= 0.0);
  CHECK(r.mtl_metric <= 1.0);
  CHECK(r.stl_metric >= 0.0);
  CHECK(r.stl_metric <= 1.0);
  CHECK(r.mtl_spearman == 0.0);  // only reported for regression
}

TEST_CASE("transfer gap validates splits and arguments") {
  Rng rng(34);
  Vec theta = rng.gaussian_vec(3);
  TaskDataset split_task = gen_linear_task(theta, 40, 0.0, nullptr, 341);
  split_dataset(split_task, 30, 342);
  TaskDataset unsplit = gen_linear_task(theta, 40, 0.0, nullptr, 343);

  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(transfer_gap(split_task, unsplit, 1, cfg), ArgumentError);
  CHECK_THROWS_AS(transfer_gap(split_task, split_task, 0, cfg), ArgumentError);
  TaskDataset small = gen_linear_task(Vec{1.0, 2.0}, 40, 0.0, nullptr, 344);
  CHECK_THROWS_AS(transfer_gap(small, split_task, 1, cfg), ArgumentError);
  TrainConfig bad = cfg;
  bad.weights = WeightVector::uniform(3);
  CHECK_THROWS_AS(transfer_gap(split_task, split_task, 1, bad), ArgumentError);
}

TEST_CASE("identical noiseless tasks satisfy the recovery bound at zero") {
  Rng rng(41);
  Vec theta = rng.gaussian_vec(6);
  TaskDataset source = gen_linear_task(theta, 300, 0.0, nullptr, 411);
  TaskDataset target = gen_linear_task(theta, 50, 0.0, nullptr, 412);

  MTLModel sol = rank1_solution(theta, source, target);
  Theorem1Report rep = theorem1_check(source, target, sol);
  CHECK(rep.sin_theta == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(rep.c == doctest::Approx(0.0).epsilon(1e-5));
  CHECK(rep.assumption_ok);
  CHECK(rep.lhs <= 1e-6);
  CHECK(rep.rhs <= 1e-4);
  CHECK(rep.satisfied);
}

TEST_CASE("orthonormal target covariates give the direct bound formula") {
  Rng rng(42);
  Vec theta1 = rng.gaussian_vec(7);
  kernels::scale(1.0 / kernels::norm2(theta1), theta1);
  Vec theta2 = unit_with_angle(theta1, 0.05, 421);

  TaskDataset source = gen_linear_task(theta1, 200, 0.0, nullptr, 422);
  DenseMatrix x2 = random_orthonormal(7, 423);
  TaskDataset target = make_task(x2, kernels::matvec(x2, theta2), TaskKind::regression);
  target.theta_true = DenseMatrix::from_column(theta2);

  MTLModel sol = rank1_solution(theta1, source, target);
  Theorem1Report rep = theorem1_check(source, target, sol);
  CHECK(rep.kappa == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(rep.sin_theta == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(rep.c == doctest::Approx(0.05).epsilon(1e-10));
  CHECK(rep.noise_ratio == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(rep.rhs == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(rep.assumption_ok);
}

TEST_CASE("instances past the similarity assumption are flagged, not asserted") {
  Rng rng(43);
  Vec theta1 = rng.gaussian_vec(5);
  kernels::scale(1.0 / kernels::norm2(theta1), theta1);
  Vec theta2 = unit_with_angle(theta1, 0.4, 431);

  TaskDataset source = gen_linear_task(theta1, 100, 0.0, nullptr, 432);
  DenseMatrix x2 = random_orthonormal(5, 433);
  TaskDataset target = make_task(x2, kernels::matvec(x2, theta2), TaskKind::regression);
  target.theta_true = DenseMatrix::from_column(theta2);

  MTLModel sol = rank1_solution(theta1, source, target);
  Theorem1Report rep = theorem1_check(source, target, sol);
  CHECK(rep.c == doctest::Approx(0.4).epsilon(1e-10));
  CHECK_FALSE(rep.assumption_ok);
  CHECK_FALSE(rep.satisfied);
  CHECK(rep.rhs == 0.0);
}

TEST_CASE("the bound grows with the similarity parameter") {
  Rng rng(44);
  Vec theta1 = rng.gaussian_vec(6);
  kernels::scale(1.0 / kernels::norm2(theta1), theta1);
  TaskDataset source = gen_linear_task(theta1, 100, 0.0, nullptr, 441);
  DenseMatrix x2 = random_orthonormal(6, 442);

  double prev = -1.0;
  for (double s : {0.02, 0.08, 0.15, 0.22, 0.30}) {
    Vec theta2 = unit_with_angle(theta1, s, 443);
    TaskDataset target =
        make_task(x2, kernels::matvec(x2, theta2), TaskKind::regression);
    target.theta_true = DenseMatrix::from_column(theta2);
    MTLModel sol = rank1_solution(theta1, source, target);
    Theorem1Report rep = theorem1_check(source, target, sol);
    REQUIRE(rep.assumption_ok);
    CHECK(rep.rhs > prev);
    prev = rep.rhs;
  }
}

TEST_CASE("theorem check rejects missing ground truth and bad shapes") {
  Rng rng(45);
  Vec theta = rng.gaussian_vec(4);
  TaskDataset source = gen_linear_task(theta, 50, 0.0, nullptr, 451);
  TaskDataset bare =
      make_task(random_matrix(20, 4, 452), Rng(453).gaussian_vec(20),
                TaskKind::regression);

  MTLModel sol = rank1_solution(theta, source, source);
  CHECK_THROWS_AS(theorem1_check(source, bare, sol), ArgumentError);
  CHECK_THROWS_AS(theorem1_check(bare, source, sol), ArgumentError);

  MTLModel wide = MTLModel::random_init(4, 2, 2, Activation::linear, 7);
  CHECK_THROWS_AS(theorem1_check(source, source, wide), ArgumentError);
}

TEST_CASE("sine contraction is an equality for orthonormal maps") {
  DenseMatrix q = random_orthonormal(6, 51);
  Rng rng(52);
  Vec a = rng.gaussian_vec(6), b = rng.gaussian_vec(6);
  SinContractionReport rep = sin_contraction_check(q, a, b);
  CHECK_FALSE(rep.degenerate);
  CHECK(rep.kappa == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(rep.lhs == doctest::Approx(cos_sin(a, b).second).epsilon(1e-10));
  CHECK(rep.holds);
}

TEST_CASE("parallel inputs contract to zero on both sides") {
  DenseMatrix x = random_matrix(9, 4, 53);
  Vec a = Rng(54).gaussian_vec(4);
  SinContractionReport rep = sin_contraction_check(x, a, a);
  CHECK(rep.lhs == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(rep.rhs == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(rep.holds);
}

TEST_CASE("sine contraction holds on a thousand random triples") {
  Rng rng(55);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform_int(5));
    const std::size_t m = d + static_cast<std::size_t>(rng.uniform_int(12));
    DenseMatrix x = gaussian_matrix(m, d, rng);
    Vec a = rng.gaussian_vec(d), b = rng.gaussian_vec(d);
    SinContractionReport rep = sin_contraction_check(x, a, b);
    REQUIRE_FALSE(rep.degenerate);
    REQUIRE(rep.holds);
  }
}

TEST_CASE("annihilated inputs are flagged degenerate") {
  DenseMatrix x(3, 2);
  x(0, 0) = 1.0;
  x(1, 0) = 2.0;
  x(2, 0) = -1.0;  // second column zero: e2 is in the kernel
  Vec a{0.0, 1.0};
  Vec b{1.0, 0.0};
  SinContractionReport rep = sin_contraction_check(x, a, b);
  CHECK(rep.degenerate);
  CHECK(rep.holds);

  CHECK_THROWS_AS(sin_contraction_check(x, Vec{0.0, 0.0}, b), ArgumentError);
  CHECK_THROWS_AS(sin_contraction_check(x, Vec{1.0, 0.0, 0.0}, b), ArgumentError);
}

TEST_CASE("angle to target hits the exact endpoints") {
  Vec theta{1.0, 2.0, -1.0};
  CHECK(angle_to_target(DenseMatrix::from_column(theta), theta) ==
        doctest::Approx(0.0).epsilon(1e-12));

  DenseMatrix anti = DenseMatrix::from_column(theta);
  kernels::scale(-2.5, anti);
  CHECK(angle_to_target(anti, theta) == doctest::Approx(0.0).epsilon(1e-12));

  Vec perp{2.0, -1.0, 0.0};  // orthogonal to theta
  CHECK(kernels::dot(perp, theta) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(angle_to_target(DenseMatrix::from_column(perp), theta) ==
        doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(angle_to_target(DenseMatrix(3, 1), theta), ArgumentError);
  CHECK_THROWS_AS(angle_to_target(DenseMatrix(3, 2), theta), ArgumentError);
}

TEST_CASE("optimal shared directions stay within the angle bound across seeds") {
  const std::size_t d = 10;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(600, seed));
    Vec theta1 = rng.gaussian_vec(d);
    kernels::scale(1.0 / kernels::norm2(theta1), theta1);
    const double sin_pair = (seed % 2 == 0) ? 0.02 : 0.05;
    Vec theta2 = unit_with_angle(theta1, sin_pair, mix_seed(601, seed));

    TaskDataset source = gen_linear_task(theta1, 2000, 0.0, nullptr, mix_seed(602, seed));
    TaskDataset target = gen_linear_task(theta2, 40, 0.1, nullptr, mix_seed(603, seed));

    auto [x2, y2] = target.train_data();
    const double kappa2 = condition_number(x2);
    const double c = kappa2 * sin_pair;
    REQUIRE(c <= 1.0 / 3.0);

    auto [x1, y1] = source.train_data();
    Rank1AscentOptions opts;
    opts.seed = mix_seed(604, seed);
    opts.restarts = 1;
    opts.warm_starts = {theta1};
    Vec dir = best_rank1_shared({{&x1, &y1}, {&x2, &y2}},
                                WeightVector::uniform(2), opts);
    const double angle = angle_to_target(DenseMatrix::from_column(dir), theta2);
    CHECK(angle <= sin_pair + c / kappa2 + 0.05);
  }
}

TEST_CASE("spearman matches hand-computed values and handles ties") {
  Vec inc{1.0, 2.0, 3.0, 4.0};
  Vec monotone{10.0, 20.0, 25.0, 100.0};
  CHECK(spearman(inc, monotone) == doctest::Approx(1.0).epsilon(1e-12));

  Vec dec{4.0, 3.0, 2.0, 1.0};
  CHECK(spearman(inc, dec) == doctest::Approx(-1.0).epsilon(1e-12));

  Vec tied{1.0, 2.0, 2.0, 3.0};
  CHECK(spearman(tied, inc) == doctest::Approx(3.0 / std::sqrt(10.0)).epsilon(1e-12));

  Vec flat{5.0, 5.0, 5.0, 5.0};
  CHECK(spearman(flat, inc) == 0.0);

  CHECK_THROWS_AS(spearman(inc, Vec{1.0}), ArgumentError);
  CHECK_THROWS_AS(spearman(Vec{1.0}, Vec{1.0}), ArgumentError);
}

TEST_CASE("greedy diagnostic reproduces the orthogonal-task ladder") {
  const std::size_t k = 4;
  DenseMatrix eye = DenseMatrix::identity(k);
  std::vector<Vec> ys(k, Vec(k, 0.0));
  std::vector<DataRef> refs;
  for (std::size_t i = 0; i < k; ++i) {
    ys[i][i] = 1.0;
    refs.push_back({&eye, &ys[i]});
  }
  GreedyDiagnostic diag = greedy_capacity_diagnostic(refs, 17);
  CHECK(diag.total_energy == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(diag.stl_energy == doctest::Approx(4.0).epsilon(1e-12));
  for (std::size_t r = 1; r <= k; ++r)
    CHECK(diag.loss_bound(r) ==
          doctest::Approx(static_cast<double>(k - r)).epsilon(1e-9));
}

TEST_CASE("greedy bound dominates the exact shared-covariate optimum") {
  Rng rng(71);
  DenseMatrix x = gaussian_matrix(30, 5, rng);
  std::vector<Vec> labels;
  for (int i = 0; i < 3; ++i) labels.push_back(rng.gaussian_vec(30));
  std::vector<DataRef> refs;
  for (const Vec& y : labels) refs.push_back({&x, &y});

  GreedyDiagnostic diag = greedy_capacity_diagnostic(refs, 72);
  WeightVector w = WeightVector::uniform(3);
  std::vector<const TaskDataset*> tasks;
  std::vector<TaskDataset> storage;
  for (const Vec& y : labels) storage.push_back(make_task(x, y, TaskKind::regression));
  for (const TaskDataset& t : storage) tasks.push_back(&t);

  for (std::size_t r = 1; r <= 3; ++r) {
    ClosedFormSolution exact = solve_equal_covariance(tasks, w, r);
    CHECK(exact.objective_value <= diag.loss_bound(r) + 1e-6);
  }

  double captured = 0.0;
  for (double l : diag.lambdas) captured += l;
  CHECK(captured == doctest::Approx(diag.stl_energy).epsilon(1e-6));
}
