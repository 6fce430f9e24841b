#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"
#include "mtlab/task.hpp"

using namespace mtlab;

namespace {

DenseMatrix empirical_covariance(const DenseMatrix& x) {
  DenseMatrix g = kernels::gram(x);
  kernels::scale(1.0 / static_cast<double>(x.rows()), g);
  return g;
}

double rel_fro(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix d = a;
  kernels::madd(-1.0, b, d);
  return kernels::frobenius(d) / kernels::frobenius(b);
}

}  // namespace

TEST_CASE("linear task is exact when noiseless") {
  Vec theta{0.5, -1.25, 2.0};
  TaskDataset t = gen_linear_task(theta, 200, 0.0, nullptr, 11);
  CHECK(t.samples() == 200);
  CHECK(t.dim() == 3);
  CHECK(t.kind == TaskKind::regression);
  Vec pred = kernels::matvec(t.x, theta);
  for (std::size_t i = 0; i < pred.size(); ++i)
    CHECK(std::abs(pred[i] - t.y[i]) <= 1e-12 * (1.0 + std::abs(t.y[i])));
  REQUIRE(t.theta_true.has_value());
  for (std::size_t i = 0; i < theta.size(); ++i)
    CHECK((*t.theta_true)(i, 0) == theta[i]);
  // Default split: everything is train, nothing is validation.
  CHECK(t.train_idx.size() == 200);
  CHECK_FALSE(t.has_validation());
}

TEST_CASE("same seed replays the dataset bit for bit") {
  Vec theta{1.0, 2.0};
  TaskDataset a = gen_linear_task(theta, 64, 0.3, nullptr, 99);
  TaskDataset b = gen_linear_task(theta, 64, 0.3, nullptr, 99);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  TaskDataset c = gen_linear_task(theta, 64, 0.3, nullptr, 100);
  CHECK_FALSE(a.x == c.x);
}

TEST_CASE("noise has the requested scale") {
  Vec theta{1.0, -1.0, 0.5, 2.0};
  const double sigma = 0.7;
  TaskDataset t = gen_linear_task(theta, 20000, sigma, nullptr, 5);
  Vec clean = kernels::matvec(t.x, theta);
  double mean = 0.0, var = 0.0;
  for (std::size_t i = 0; i < t.samples(); ++i) mean += t.y[i] - clean[i];
  mean /= static_cast<double>(t.samples());
  for (std::size_t i = 0; i < t.samples(); ++i) {
    const double e = t.y[i] - clean[i] - mean;
    var += e * e;
  }
  var /= static_cast<double>(t.samples() - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(std::sqrt(var) - sigma) < 0.02);
}

TEST_CASE("shaped covariates match the population covariance") {
  const std::size_t d = 8;
  CovarianceSpec cov;
  cov.rotation = random_orthonormal(d, 42);
  cov.boosted = {1, 4};
  cov.kappa = 5.0;
  Vec theta(d, 1.0);
  TaskDataset t = gen_linear_task(theta, 60000, 0.0, &cov, 7);
  DenseMatrix emp = empirical_covariance(t.x);
  DenseMatrix pop = cov.population_covariance();
  CHECK(rel_fro(emp, pop) < 0.05);
}

TEST_CASE("population covariance has a closed diagonal form without rotation") {
  CovarianceSpec cov;
  cov.rotation = DenseMatrix::identity(3);
  cov.boosted = {0};
  cov.kappa = 3.0;
  DenseMatrix pop = cov.population_covariance();
  CHECK(pop(0, 0) == doctest::Approx(9.0));
  CHECK(pop(1, 1) == doctest::Approx(1.0));
  CHECK(pop(2, 2) == doctest::Approx(1.0));
  CHECK(pop(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("covariance spec is validated") {
  Vec theta{1.0, 1.0};
  CovarianceSpec bad;
  bad.rotation = DenseMatrix::identity(3);  // wrong size for d = 2
  CHECK_THROWS_AS(gen_linear_task(theta, 10, 0.0, &bad, 1), ArgumentError);
  CovarianceSpec low;
  low.rotation = DenseMatrix::identity(2);
  low.kappa = 0.5;
  CHECK_THROWS_AS(gen_linear_task(theta, 10, 0.0, &low, 1), ArgumentError);
  CovarianceSpec oob;
  oob.rotation = DenseMatrix::identity(2);
  oob.boosted = {2};
  CHECK_THROWS_AS(gen_linear_task(theta, 10, 0.0, &oob, 1), ArgumentError);
}

TEST_CASE("relu task applies the head scale after the nonlinearity") {
  Vec theta{0.3, -0.8, 1.1};
  const double a = 2.5;
  TaskDataset t = gen_relu_task(theta, a, 300, 0.0, 21);
  Vec z = kernels::matvec(t.x, theta);
  for (std::size_t i = 0; i < t.samples(); ++i)
    CHECK(t.y[i] == doctest::Approx(a * relu(z[i])).epsilon(1e-12));
  REQUIRE(t.a_true.has_value());
  CHECK(*t.a_true == a);
}

TEST_CASE("relu of a standard gaussian has mean norm over sqrt(2 pi)") {
  Vec theta{0.6, 0.8};  // unit norm
  TaskDataset t = gen_relu_task(theta, 1.0, 200000, 0.0, 3);
  double mean = 0.0;
  for (double v : t.y) mean += v;
  mean /= static_cast<double>(t.samples());
  CHECK(std::abs(mean - 1.0 / std::sqrt(2.0 * 3.14159265358979323846)) < 0.01);
}

TEST_CASE("logistic labels are the halfspace indicator with ties to one") {
  Vec theta{1.0, -2.0, 0.5};
  TaskDataset t = gen_logistic_task(theta, 500, 13);
  CHECK(t.kind == TaskKind::classification);
  Vec z = kernels::matvec(t.x, theta);
  for (std::size_t i = 0; i < t.samples(); ++i) {
    CHECK((t.y[i] == 0.0 || t.y[i] == 1.0));
    CHECK(t.y[i] == (z[i] >= 0.0 ? 1.0 : 0.0));
  }
  DenseMatrix zero_row(1, 3, 0.0);
  Vec lab = logistic_labels(zero_row, theta);
  CHECK(lab[0] == 1.0);  // margin exactly zero goes to the positive class
}

TEST_CASE("logistic classes are roughly balanced for centered covariates") {
  Vec theta{2.0, 1.0};
  TaskDataset t = gen_logistic_task(theta, 40000, 77);
  double ones = 0.0;
  for (double v : t.y) ones += v;
  CHECK(std::abs(ones / 40000.0 - 0.5) < 0.02);
}

TEST_CASE("multihead relu sums the per-column responses") {
  DenseMatrix theta(2, 3);
  theta(0, 0) = 1.0;
  theta(1, 0) = -1.0;
  theta(0, 1) = 0.5;
  theta(1, 1) = 0.5;
  theta(0, 2) = -2.0;
  theta(1, 2) = 0.1;
  TaskDataset t = gen_multihead_relu_task(theta, 150, 0.0, 8);
  DenseMatrix h = kernels::matmul(t.x, theta);
  for (std::size_t i = 0; i < t.samples(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += relu(h(i, j));
    CHECK(t.y[i] == doctest::Approx(s).epsilon(1e-12));
  }
  REQUIRE(t.theta_true.has_value());
  CHECK(t.theta_true->cols() == 3);
}

TEST_CASE("model pairs hit the requested cosine") {
  Vec theta1{1.0, 0.0, 0.0, 0.0};
  for (double alpha : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    Vec theta2 = make_model_pair(theta1, alpha, 17);
    auto [c, s] = cos_sin(theta1, theta2);
    const double expected =
        alpha / std::sqrt(alpha * alpha + (1.0 - alpha) * (1.0 - alpha));
    if (alpha == 1.0) {
      CHECK(c == doctest::Approx(1.0));
    } else {
      CHECK(c == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(s == doctest::Approx(std::sqrt(1.0 - expected * expected)).epsilon(1e-12));
  }
}

TEST_CASE("alpha_for_cos inverts the cosine map") {
  for (double target : {0.0, 0.3, 0.7, 0.96, 1.0}) {
    const double alpha = alpha_for_cos(target);
    Vec theta1{0.0, 1.0, 0.0};
    Vec theta2 = make_model_pair(theta1, alpha, 29);
    auto [c, s] = cos_sin(theta1, theta2);
    CHECK(c == doctest::Approx(target).epsilon(1e-12));
  }
  CHECK_THROWS_AS(alpha_for_cos(1.5), ArgumentError);
  CHECK_THROWS_AS(alpha_for_cos(-0.1), ArgumentError);
}

TEST_CASE("make_model_pair handles the one-dimensional degenerate case") {
  Vec theta1{2.0};
  Vec theta2 = make_model_pair(theta1, 0.5, 1);
  CHECK(theta2[0] == doctest::Approx(1.0));
}

TEST_CASE("unit_with_angle places a unit vector at the exact angle") {
  Vec theta1{3.0, 4.0, 0.0, 0.0, 0.0};
  for (double sa : {0.0, 0.1, 1.0 / 3.0, 1.0}) {
    Vec v = unit_with_angle(theta1, sa, 55);
    CHECK(kernels::norm2(v) == doctest::Approx(1.0).epsilon(1e-12));
    auto [c, s] = cos_sin(theta1, v);
    CHECK(s == doctest::Approx(sa).epsilon(1e-12));
  }
  CHECK_THROWS_AS(unit_with_angle(theta1, 1.5, 0), ArgumentError);
}

TEST_CASE("flip_labels flips exactly the selected share at probability one") {
  Vec theta{1.0, -1.0};
  TaskDataset t = gen_logistic_task(theta, 1000, 31);
  TaskDataset flipped = flip_labels(t, 0.3, 1.0, 7);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < t.samples(); ++i)
    if (t.y[i] != flipped.y[i]) ++changed;
  CHECK(changed == 300);
  for (double v : flipped.y) CHECK((v == 0.0 || v == 1.0));

  TaskDataset untouched = flip_labels(t, 0.3, 0.0, 7);
  CHECK(untouched.y == t.y);

  TaskDataset partial = flip_labels(t, 1.0, 0.5, 7);
  std::size_t part = 0;
  for (std::size_t i = 0; i < t.samples(); ++i)
    if (t.y[i] != partial.y[i]) ++part;
  CHECK(part > 400);
  CHECK(part < 600);
}

TEST_CASE("flip_labels rejects regression tasks and bad rates") {
  TaskDataset reg = gen_linear_task(Vec{1.0}, 10, 0.0, nullptr, 1);
  CHECK_THROWS_AS(flip_labels(reg, 0.1, 1.0, 0), ArgumentError);
  TaskDataset cls = gen_logistic_task(Vec{1.0, 1.0}, 10, 1);
  CHECK_THROWS_AS(flip_labels(cls, 1.1, 1.0, 0), ArgumentError);
  CHECK_THROWS_AS(flip_labels(cls, 0.1, -0.5, 0), ArgumentError);
}

TEST_CASE("split_dataset partitions the rows") {
  TaskDataset t = gen_linear_task(Vec{1.0, 2.0}, 100, 0.1, nullptr, 3);
  split_dataset(t, 70, 123);
  CHECK(t.train_idx.size() == 70);
  CHECK(t.val_idx.size() == 30);
  std::set<std::size_t> all(t.train_idx.begin(), t.train_idx.end());
  all.insert(t.val_idx.begin(), t.val_idx.end());
  CHECK(all.size() == 100);
  CHECK(std::is_sorted(t.train_idx.begin(), t.train_idx.end()));
  CHECK(std::is_sorted(t.val_idx.begin(), t.val_idx.end()));
  t.validate();

  auto [xt, yt] = t.train_data();
  CHECK(xt.rows() == 70);
  CHECK(yt.size() == 70);
  CHECK(xt(0, 0) == t.x(t.train_idx[0], 0));

  CHECK_THROWS_AS(split_dataset(t, 0, 1), ArgumentError);
  CHECK_THROWS_AS(split_dataset(t, 100, 1), ArgumentError);
}

TEST_CASE("validate rejects malformed datasets") {
  TaskDataset t;
  t.x = DenseMatrix(4, 2, 1.0);
  t.y = Vec{1.0, 2.0, 3.0};  // one short
  t.train_idx = {0, 1, 2, 3};
  CHECK_THROWS_AS(t.validate(), ArgumentError);
  t.y.push_back(4.0);
  t.validate();
  t.train_idx = {0, 1, 2};  // row 3 uncovered
  CHECK_THROWS_AS(t.validate(), ArgumentError);
  t.train_idx = {0, 1, 2, 2};  // duplicate
  CHECK_THROWS_AS(t.validate(), ArgumentError);
  t.train_idx = {0, 1, 2, 3};
  t.kind = TaskKind::classification;
  CHECK_THROWS_AS(t.validate(), ArgumentError);  // labels not in {0,1}
}

TEST_CASE("csv round trip preserves every bit and the sidecar") {
  Vec theta{0.123456789123456789, -7.5};
  TaskDataset t = gen_linear_task(theta, 40, 0.25, nullptr, 451);
  split_dataset(t, 30, 9);
  const std::string path = "roundtrip_task.csv";
  save_task(t, path);
  TaskDataset back = load_task(path);
  CHECK(back.x == t.x);
  CHECK(back.y == t.y);
  CHECK(back.kind == t.kind);
  CHECK(back.noise_sigma == t.noise_sigma);
  CHECK(back.generator == t.generator);
  CHECK(back.train_idx == t.train_idx);
  CHECK(back.val_idx == t.val_idx);
  REQUIRE(back.theta_true.has_value());
  CHECK(*back.theta_true == *t.theta_true);
  CHECK_FALSE(back.a_true.has_value());

  TaskDataset cls = gen_logistic_task(Vec{1.0, -1.0, 2.0}, 25, 6);
  save_task(cls, path);
  TaskDataset cls_back = load_task(path);
  CHECK(cls_back.kind == TaskKind::classification);
  CHECK(cls_back.y == cls.y);

  std::remove(path.c_str());
  std::remove("roundtrip_task.json");
}

TEST_CASE("loading without a sidecar falls back to a plain regression task") {
  TaskDataset t = gen_linear_task(Vec{1.0, 1.0}, 12, 0.0, nullptr, 2);
  const std::string path = "nosidecar_task.csv";
  save_task(t, path);
  std::remove("nosidecar_task.json");
  TaskDataset back = load_task(path);
  CHECK(back.x == t.x);
  CHECK(back.kind == TaskKind::regression);
  CHECK_FALSE(back.theta_true.has_value());
  CHECK(back.train_idx.size() == 12);
  std::remove(path.c_str());
}

TEST_CASE("load_task rejects malformed files") {
  {
    std::FILE* f = std::fopen("bad_header.csv", "w");
    std::fputs("a,b,y\n1,2,3\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_task("bad_header.csv"), IoError);
  {
    std::FILE* f = std::fopen("ragged.csv", "w");
    std::fputs("x0,x1,y\n1,2,3\n1,2\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_task("ragged.csv"), IoError);
  {
    std::FILE* f = std::fopen("notnum.csv", "w");
    std::fputs("x0,y\nfoo,3\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_task("notnum.csv"), IoError);
  CHECK_THROWS_AS(load_task("does_not_exist.csv"), IoError);
  std::remove("bad_header.csv");
  std::remove("ragged.csv");
  std::remove("notnum.csv");
}

TEST_CASE("generator rejections") {
  CHECK_THROWS_AS(gen_linear_task(Vec{}, 10, 0.0, nullptr, 0), ArgumentError);
  CHECK_THROWS_AS(gen_linear_task(Vec{1.0}, 0, 0.0, nullptr, 0), ArgumentError);
  CHECK_THROWS_AS(gen_linear_task(Vec{1.0}, 10, -1.0, nullptr, 0), ArgumentError);
  CHECK_THROWS_AS(gen_relu_task(Vec{1.0}, 1.0, 0, 0.0, 0), ArgumentError);
  CHECK_THROWS_AS(gen_logistic_task(Vec{}, 10, 0), ArgumentError);
  CHECK_THROWS_AS(gen_multihead_relu_task(DenseMatrix(), 10, 0.0, 0), ArgumentError);
  CHECK_THROWS_AS(make_model_pair(Vec{1.0, 1.0}, 1.5, 0), ArgumentError);
  CHECK_THROWS_AS(make_model_pair(Vec{0.0, 0.0}, 0.5, 0), ArgumentError);
}
