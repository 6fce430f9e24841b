#include "mtlab/task.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"

namespace mtlab {

using nlohmann::json;

double relu(double v) { return v > 0.0 ? v : 0.0; }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

DenseMatrix CovarianceSpec::population_covariance() const {
  const std::size_t d = rotation.rows();
  DenseMatrix qd = rotation;
  Vec diag(d, 1.0);
  for (std::size_t idx : boosted) diag[idx] = kappa;
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) qd(i, j) *= diag[j] * diag[j];
  return kernels::matmul_a_bt(qd, rotation);
}

namespace {

std::pair<DenseMatrix, Vec> take_rows(const TaskDataset& t,
                                      const std::vector<std::size_t>& idx) {
  DenseMatrix xs(idx.size(), t.x.cols());
  Vec ys(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t r = idx[i];
    for (std::size_t j = 0; j < t.x.cols(); ++j) xs(i, j) = t.x(r, j);
    ys[i] = t.y[r];
  }
  return {std::move(xs), std::move(ys)};
}

void default_split(TaskDataset& t) {
  t.train_idx.resize(t.x.rows());
  for (std::size_t i = 0; i < t.train_idx.size(); ++i) t.train_idx[i] = i;
  t.val_idx.clear();
}

// X = R Q D drawn row-major from rng; without cov, X = R.
DenseMatrix draw_covariates(std::size_t m, std::size_t d, const CovarianceSpec* cov,
                            Rng& rng) {
  DenseMatrix r = gaussian_matrix(m, d, rng);
  if (!cov) return r;
  if (cov->rotation.rows() != d || cov->rotation.cols() != d)
    throw ArgumentError("gen task: covariance rotation must be d x d");
  if (cov->kappa < 1.0)
    throw ArgumentError("gen task: covariance boost kappa must be >= 1");
  for (std::size_t idx : cov->boosted)
    if (idx >= d) throw ArgumentError("gen task: boosted coordinate out of range");
  // Shape rows as x = z D Q^T with z standard normal, giving covariance
  // Q D^2 Q^T: the boost lands on the rotated directions, not raw axes.
  Vec diag(d, 1.0);
  for (std::size_t idx : cov->boosted) diag[idx] = cov->kappa;
  DenseMatrix dqt(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) dqt(i, j) = diag[i] * cov->rotation(j, i);
  return kernels::matmul(r, dqt);
}

void check_theta(const Vec& theta) {
  if (theta.empty()) throw ArgumentError("gen task: theta must be nonempty");
  for (double v : theta)
    if (!std::isfinite(v)) throw ArgumentError("gen task: theta must be finite");
}

std::string sidecar_path(const std::string& csv_path) {
  const auto dot = csv_path.find_last_of('.');
  const auto slash = csv_path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return csv_path + ".json";
  return csv_path.substr(0, dot) + ".json";
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::pair<DenseMatrix, Vec> TaskDataset::train_data() const {
  return take_rows(*this, train_idx);
}

std::pair<DenseMatrix, Vec> TaskDataset::validation_data() const {
  return take_rows(*this, val_idx);
}

void TaskDataset::validate() const {
  if (x.rows() == 0 || x.cols() == 0)
    throw ArgumentError("task: empty covariate matrix");
  if (y.size() != x.rows()) throw ArgumentError("task: label count != row count");
  std::vector<bool> seen(x.rows(), false);
  for (std::size_t i : train_idx) {
    if (i >= x.rows() || seen[i]) throw ArgumentError("task: bad train index set");
    seen[i] = true;
  }
  for (std::size_t i : val_idx) {
    if (i >= x.rows() || seen[i]) throw ArgumentError("task: bad validation index set");
    seen[i] = true;
  }
  for (bool s : seen)
    if (!s) throw ArgumentError("task: split does not cover all rows");
  if (kind == TaskKind::classification)
    for (double v : y)
      if (v != 0.0 && v != 1.0)
        throw ArgumentError("task: classification labels must be 0 or 1");
  if (theta_true && theta_true->rows() != x.cols())
    throw ArgumentError("task: theta_true dimension mismatch");
  if (noise_sigma < 0.0) throw ArgumentError("task: negative noise sigma");
}

TaskDataset make_task(DenseMatrix x, Vec y, TaskKind kind) {
  TaskDataset t;
  t.x = std::move(x);
  t.y = std::move(y);
  t.kind = kind;
  default_split(t);
  t.validate();
  return t;
}

TaskDataset gen_linear_task(const Vec& theta, std::size_t m, double sigma,
                            const CovarianceSpec* cov, std::uint64_t seed) {
  check_theta(theta);
  if (m == 0) throw ArgumentError("gen_linear_task: m must be positive");
  if (sigma < 0.0) throw ArgumentError("gen_linear_task: sigma must be >= 0");
  Rng rng(seed);
  TaskDataset t;
  t.x = draw_covariates(m, theta.size(), cov, rng);
  t.y = kernels::matvec(t.x, theta);
  if (sigma > 0.0)
    for (double& v : t.y) v += sigma * rng.gaussian();
  t.kind = TaskKind::regression;
  t.noise_sigma = sigma;
  t.theta_true = DenseMatrix::from_column(theta);
  t.generator = "linear";
  default_split(t);
  return t;
}

TaskDataset gen_relu_task(const Vec& theta, double a, std::size_t m, double sigma,
                          std::uint64_t seed) {
  check_theta(theta);
  if (m == 0) throw ArgumentError("gen_relu_task: m must be positive");
  if (sigma < 0.0) throw ArgumentError("gen_relu_task: sigma must be >= 0");
  Rng rng(seed);
  TaskDataset t;
  t.x = gaussian_matrix(m, theta.size(), rng);
  t.y = kernels::matvec(t.x, theta);
  for (double& v : t.y) v = a * relu(v);
  if (sigma > 0.0)
    for (double& v : t.y) v += sigma * rng.gaussian();
  t.kind = TaskKind::regression;
  t.noise_sigma = sigma;
  t.theta_true = DenseMatrix::from_column(theta);
  t.a_true = a;
  t.generator = "relu";
  default_split(t);
  return t;
}

Vec logistic_labels(const DenseMatrix& x, const Vec& theta) {
  Vec z = kernels::matvec(x, theta);
  for (double& v : z) v = sigmoid(v) >= 0.5 ? 1.0 : 0.0;
  return z;
}

TaskDataset gen_logistic_task(const Vec& theta, std::size_t m, std::uint64_t seed) {
  check_theta(theta);
  if (m == 0) throw ArgumentError("gen_logistic_task: m must be positive");
  Rng rng(seed);
  TaskDataset t;
  t.x = gaussian_matrix(m, theta.size(), rng);
  t.y = logistic_labels(t.x, theta);
  t.kind = TaskKind::classification;
  t.theta_true = DenseMatrix::from_column(theta);
  t.generator = "logistic";
  default_split(t);
  return t;
}

TaskDataset gen_multihead_relu_task(const DenseMatrix& theta, std::size_t m,
                                    double sigma, std::uint64_t seed) {
  if (theta.rows() == 0 || theta.cols() == 0)
    throw ArgumentError("gen_multihead_relu_task: empty theta");
  if (m == 0) throw ArgumentError("gen_multihead_relu_task: m must be positive");
  if (sigma < 0.0) throw ArgumentError("gen_multihead_relu_task: sigma must be >= 0");
  Rng rng(seed);
  TaskDataset t;
  t.x = gaussian_matrix(m, theta.rows(), rng);
  DenseMatrix h = kernels::matmul(t.x, theta);
  t.y.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < h.cols(); ++j) s += relu(h(i, j));
    t.y[i] = s;
  }
  if (sigma > 0.0)
    for (double& v : t.y) v += sigma * rng.gaussian();
  t.kind = TaskKind::regression;
  t.noise_sigma = sigma;
  t.theta_true = theta;
  t.generator = "multihead_relu";
  default_split(t);
  return t;
}

Vec make_model_pair(const Vec& theta1, double alpha, std::uint64_t seed) {
  check_theta(theta1);
  if (alpha < 0.0 || alpha > 1.0)
    throw ArgumentError("make_model_pair: alpha must be in [0, 1]");
  const double n1 = kernels::norm2(theta1);
  if (n1 == 0.0) throw ArgumentError("make_model_pair: theta1 must be nonzero");
  if (theta1.size() == 1) {
    // No orthogonal direction exists; degenerate to scaling.
    Vec t2 = theta1;
    kernels::scale(alpha, t2);
    return t2;
  }
  Rng rng(seed);
  Vec perp = random_unit_vector(theta1.size(), rng);
  // Orthogonalize against theta1 and renormalize; retry on the measure-zero
  // event of colinearity.
  for (;;) {
    const double proj = kernels::dot(perp, theta1) / (n1 * n1);
    kernels::axpy(-proj, theta1, perp);
    const double np = kernels::norm2(perp);
    if (np > 1e-12) {
      kernels::scale(1.0 / np, perp);
      break;
    }
    perp = random_unit_vector(theta1.size(), rng);
  }
  Vec t2 = theta1;
  kernels::scale(alpha, t2);
  kernels::axpy(1.0 - alpha, perp, t2);
  return t2;
}

double alpha_for_cos(double target_cos) {
  if (target_cos < 0.0 || target_cos > 1.0)
    throw ArgumentError("alpha_for_cos: target must be in [0, 1]");
  if (target_cos == 1.0) return 1.0;
  const double s = std::sqrt(1.0 - target_cos * target_cos);
  return target_cos / (target_cos + s);
}

Vec unit_with_angle(const Vec& theta1, double sin_angle, std::uint64_t seed) {
  check_theta(theta1);
  if (sin_angle < 0.0 || sin_angle > 1.0)
    throw ArgumentError("unit_with_angle: sin must be in [0, 1]");
  const double n1 = kernels::norm2(theta1);
  if (n1 == 0.0) throw ArgumentError("unit_with_angle: theta1 must be nonzero");
  Vec unit1 = theta1;
  kernels::scale(1.0 / n1, unit1);
  if (sin_angle == 0.0) return unit1;
  Vec perp = make_model_pair(unit1, 0.0, seed);  // unit, orthogonal to theta1
  Vec out = unit1;
  kernels::scale(std::sqrt(1.0 - sin_angle * sin_angle), out);
  kernels::axpy(sin_angle, perp, out);
  return out;
}

TaskDataset flip_labels(const TaskDataset& task, double fraction, double flip_prob,
                        std::uint64_t seed) {
  if (task.kind != TaskKind::classification)
    throw ArgumentError("flip_labels: task must be classification");
  if (fraction < 0.0 || fraction > 1.0 || flip_prob < 0.0 || flip_prob > 1.0)
    throw ArgumentError("flip_labels: fraction and flip_prob must be in [0, 1]");
  TaskDataset out = task;
  const std::size_t m = task.samples();
  const std::size_t n_sel =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m)));
  Rng rng(seed);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t i = 0; i < n_sel; ++i) {
    if (rng.uniform01() < flip_prob) {
      const std::size_t r = order[i];
      out.y[r] = out.y[r] == 0.0 ? 1.0 : 0.0;
    }
  }
  return out;
}

void split_dataset(TaskDataset& task, std::size_t train_count, std::uint64_t seed) {
  const std::size_t m = task.samples();
  if (train_count == 0 || train_count >= m)
    throw ArgumentError("split_dataset: train_count must be in (0, m)");
  Rng rng(seed);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  rng.shuffle(order);
  task.train_idx.assign(order.begin(), order.begin() + static_cast<long>(train_count));
  task.val_idx.assign(order.begin() + static_cast<long>(train_count), order.end());
  std::sort(task.train_idx.begin(), task.train_idx.end());
  std::sort(task.val_idx.begin(), task.val_idx.end());
}

void save_task(const TaskDataset& task, const std::string& csv_path) {
  task.validate();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("save_task: cannot open " + csv_path);
  const std::size_t d = task.dim();
  for (std::size_t j = 0; j < d; ++j) csv << "x" << j << ",";
  csv << "y\n";
  for (std::size_t i = 0; i < task.samples(); ++i) {
    for (std::size_t j = 0; j < d; ++j) csv << fmt17(task.x(i, j)) << ",";
    csv << fmt17(task.y[i]) << "\n";
  }
  if (!csv.good()) throw IoError("save_task: write failed for " + csv_path);
  csv.close();

  json side;
  side["kind"] = task.kind == TaskKind::regression ? "regression" : "classification";
  side["noise_sigma"] = task.noise_sigma;
  side["generator"] = task.generator;
  if (task.theta_true) {
    side["theta_true"] = {{"rows", task.theta_true->rows()},
                          {"cols", task.theta_true->cols()},
                          {"data", task.theta_true->storage()}};
  } else {
    side["theta_true"] = nullptr;
  }
  if (task.a_true)
    side["a_true"] = *task.a_true;
  else
    side["a_true"] = nullptr;
  side["train_idx"] = task.train_idx;
  side["val_idx"] = task.val_idx;
  std::ofstream js(sidecar_path(csv_path));
  if (!js) throw IoError("save_task: cannot open " + sidecar_path(csv_path));
  js << side.dump(2) << "\n";
  if (!js.good()) throw IoError("save_task: write failed for sidecar");
}

TaskDataset load_task(const std::string& csv_path) {
  std::ifstream csv(csv_path);
  if (!csv) throw IoError("load_task: cannot open " + csv_path);
  std::string header;
  if (!std::getline(csv, header)) throw IoError("load_task: empty file " + csv_path);
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  if (cols.size() < 2 || cols.back() != "y")
    throw IoError("load_task: header must be x0,...,y");
  const std::size_t d = cols.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (cols[j] != "x" + std::to_string(j))
      throw IoError("load_task: unexpected column name " + cols[j]);

  std::vector<double> vals;
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw IoError("load_task: bad number '" + cell + "'");
      vals.push_back(v);
      ++n;
    }
    if (n != d + 1) throw IoError("load_task: ragged row in " + csv_path);
    ++rows;
  }
  if (rows == 0) throw IoError("load_task: no data rows in " + csv_path);

  TaskDataset t;
  t.x = DenseMatrix(rows, d);
  t.y.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) t.x(i, j) = vals[i * (d + 1) + j];
    t.y[i] = vals[i * (d + 1) + d];
  }
  default_split(t);

  std::ifstream js(sidecar_path(csv_path));
  if (js) {
    json side;
    try {
      js >> side;
    } catch (const json::exception& e) {
      throw IoError(std::string("load_task: bad sidecar json: ") + e.what());
    }
    const std::string kind = side.value("kind", "regression");
    if (kind == "classification")
      t.kind = TaskKind::classification;
    else if (kind != "regression")
      throw IoError("load_task: unknown kind " + kind);
    t.noise_sigma = side.value("noise_sigma", 0.0);
    t.generator = side.value("generator", "custom");
    if (side.contains("theta_true") && !side["theta_true"].is_null()) {
      const auto& th = side["theta_true"];
      DenseMatrix m(th.at("rows").get<std::size_t>(), th.at("cols").get<std::size_t>());
      const auto data = th.at("data").get<std::vector<double>>();
      if (data.size() != m.size()) throw IoError("load_task: theta_true size mismatch");
      std::copy(data.begin(), data.end(), m.data());
      t.theta_true = std::move(m);
    }
    if (side.contains("a_true") && !side["a_true"].is_null())
      t.a_true = side["a_true"].get<double>();
    if (side.contains("train_idx"))
      t.train_idx = side["train_idx"].get<std::vector<std::size_t>>();
    if (side.contains("val_idx"))
      t.val_idx = side["val_idx"].get<std::vector<std::size_t>>();
  }
  t.validate();
  return t;
}

}  // namespace mtlab
