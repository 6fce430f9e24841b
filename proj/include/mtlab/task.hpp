#ifndef MTLAB_TASK_HPP
#define MTLAB_TASK_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtlab/matrix.hpp"

namespace mtlab {

enum class TaskKind { regression, classification };

// Covariance shaping for generated covariates: X = R * D * Q^T with R an
// m x d standard gaussian, Q orthonormal, and D diagonal equal to kappa on
// the boosted coordinates and 1 elsewhere, so rows have covariance Q D^2 Q^T.
struct CovarianceSpec {
  DenseMatrix rotation;
  std::vector<std::size_t> boosted;
  double kappa = 1.0;

  // Population covariance Q D^2 Q^T.
  DenseMatrix population_covariance() const;
};

struct TaskDataset {
  DenseMatrix x;
  Vec y;
  TaskKind kind = TaskKind::regression;
  double noise_sigma = 0.0;
  // d x h; h = 1 for vector ground truth, h = r for multi-head models.
  std::optional<DenseMatrix> theta_true;
  std::optional<double> a_true;
  // Disjoint index sets covering all rows. Until split() is applied the
  // train set is every row and the validation set is empty.
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  // Free-form provenance, serialized into the sidecar.
  std::string generator = "custom";

  std::size_t samples() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  bool has_validation() const { return !val_idx.empty(); }

  std::pair<DenseMatrix, Vec> train_data() const;
  std::pair<DenseMatrix, Vec> validation_data() const;

  void validate() const;
};

TaskDataset make_task(DenseMatrix x, Vec y, TaskKind kind);

// y = X theta + eps, eps ~ N(0, sigma^2). Covariates are standard gaussian,
// optionally shaped as X = R D Q^T. Draw order: X entries row-major, then the
// noise vector, all from Rng(seed).
TaskDataset gen_linear_task(const Vec& theta, std::size_t m, double sigma,
                            const CovarianceSpec* cov, std::uint64_t seed);

// y = a * relu(X theta) + eps on standard gaussian covariates.
TaskDataset gen_relu_task(const Vec& theta, double a, std::size_t m, double sigma,
                          std::uint64_t seed);

// Labels in {0,1}: sigmoid(x.theta) thresholded at 0.5, ties to 1
// (equivalently x.theta >= 0). Standard gaussian covariates.
TaskDataset gen_logistic_task(const Vec& theta, std::size_t m, std::uint64_t seed);

// Same labeling rule on caller-provided covariates.
Vec logistic_labels(const DenseMatrix& x, const Vec& theta);

// y = relu(X Theta) 1 + eps with Theta d x r. Standard gaussian covariates.
TaskDataset gen_multihead_relu_task(const DenseMatrix& theta, std::size_t m,
                                    double sigma, std::uint64_t seed);

// theta2 = alpha * theta1 + (1 - alpha) * theta_perp with theta_perp a unit
// vector orthogonal to theta1 drawn from the seed. alpha in [0, 1]; for unit
// theta1, cos(theta1, theta2) = alpha / sqrt(alpha^2 + (1-alpha)^2).
Vec make_model_pair(const Vec& theta1, double alpha, std::uint64_t seed);

// Inverts the unit-norm cosine map above: the alpha for which
// cos(theta1, theta2) equals target_cos, valid for target_cos in [0, 1].
double alpha_for_cos(double target_cos);

// Unit vector at an exact angle to unit theta1: cos = sqrt(1 - sin^2).
Vec unit_with_angle(const Vec& theta1, double sin_angle, std::uint64_t seed);

// Flips round(fraction * m) distinct labels of a classification task, each
// with probability flip_prob. Returns the modified copy.
TaskDataset flip_labels(const TaskDataset& task, double fraction, double flip_prob,
                        std::uint64_t seed);

// Random disjoint train/validation split; both index lists sorted ascending.
void split_dataset(TaskDataset& task, std::size_t train_count, std::uint64_t seed);

// CSV (header x0,...,x{d-1},y; 17 significant digits) plus a JSON sidecar
// holding everything the CSV cannot: kind, sigma, ground truth, split,
// provenance. Sidecar path is the CSV path with the extension replaced by
// ".json". Loading tolerates a missing sidecar (plain regression, no split).
void save_task(const TaskDataset& task, const std::string& csv_path);
TaskDataset load_task(const std::string& csv_path);

double relu(double v);
double sigmoid(double v);

}  // namespace mtlab

#endif
