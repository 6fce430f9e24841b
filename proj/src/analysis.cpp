#include "mtlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"

namespace mtlab {

namespace {

// Retained rank under the cumulative energy rule: smallest count whose
// leading covariance singular values (squares of the data singular values)
// reach `energy` of the total.
std::size_t energy_rank(const Vec& sigma, double energy) {
  double total = 0.0;
  for (double s : sigma) total += s * s;
  if (total <= 0.0) throw ArgumentError("similarity score: zero matrix");
  std::size_t r = 1;
  double acc = sigma[0] * sigma[0];
  while (acc < energy * total && r < sigma.size()) {
    acc += sigma[r] * sigma[r];
    ++r;
  }
  return r;
}

double validation_spearman(const MTLModel& model, std::size_t task,
                           const DenseMatrix& xv, const Vec& yv) {
  return spearman(forward(model, xv, task), yv);
}

Vec ground_truth_vector(const TaskDataset& t, const char* which) {
  if (!t.theta_true || t.theta_true->cols() != 1)
    throw ArgumentError(std::string("theorem check: ") + which +
                        " task lacks vector ground truth");
  Vec theta(t.theta_true->rows());
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = (*t.theta_true)(i, 0);
  return theta;
}

}  // namespace

double task_metric(const MTLModel& model, std::size_t task, const DenseMatrix& x,
                   const Vec& y, TaskKind kind) {
  Vec pred = forward(model, x, task);
  if (kind == TaskKind::classification) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if ((pred[i] >= 0.5 ? 1.0 : 0.0) == y[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - y[i];
    sse += d * d;
  }
  return -sse / static_cast<double>(pred.size());
}

double covariance_similarity_score(const DenseMatrix& x1, const DenseMatrix& x2,
                                   double energy) {
  if (x1.cols() != x2.cols())
    throw ArgumentError("similarity score: column dimensions differ");
  if (energy <= 0.0 || energy > 1.0)
    throw ArgumentError("similarity score: energy must be in (0, 1]");
  SvdResult s1 = svd(x1);
  SvdResult s2 = svd(x2);
  const std::size_t r1 = energy_rank(s1.sigma, energy);
  const std::size_t r2 = energy_rank(s2.sigma, energy);

  // With X = U S V', the covariance square root truncates to V_r diag(S_r),
  // so the cross term is diag(S1) V1' V2 diag(S2).
  double num2 = 0.0;
  for (std::size_t i = 0; i < r1; ++i) {
    for (std::size_t j = 0; j < r2; ++j) {
      double vv = 0.0;
      for (std::size_t t = 0; t < x1.cols(); ++t) vv += s1.v(t, i) * s2.v(t, j);
      const double entry = s1.sigma[i] * vv * s2.sigma[j];
      num2 += entry * entry;
    }
  }
  double den1 = 0.0, den2 = 0.0;
  for (std::size_t i = 0; i < r1; ++i) den1 += s1.sigma[i] * s1.sigma[i];
  for (std::size_t j = 0; j < r2; ++j) den2 += s2.sigma[j] * s2.sigma[j];
  const double score = std::sqrt(num2) / std::sqrt(den1 * den2);
  return std::min(1.0, std::max(0.0, score));
}

TransferGapResult transfer_gap(const TaskDataset& source, const TaskDataset& target,
                               std::size_t r, const TrainConfig& cfg) {
  if (source.dim() != target.dim())
    throw ArgumentError("transfer gap: dimension mismatch");
  if (source.train_idx.empty())
    throw ArgumentError("transfer gap: source has no training rows");
  if (target.train_idx.empty() || !target.has_validation())
    throw ArgumentError("transfer gap: target must be split into train and validation");
  if (r == 0) throw ArgumentError("transfer gap: capacity must be positive");
  if (cfg.weights && cfg.weights->size() != 2)
    throw ArgumentError("transfer gap: weights must cover source and target");

  MTLModel init = MTLModel::random_init(source.dim(), r, 2, Activation::linear,
                                        cfg.seed);
  MTLModel stl_init;
  stl_init.shared = init.shared;
  stl_init.heads = {init.heads[1]};
  stl_init.activation = init.activation;

  // The baseline keeps the co-trained run's architecture, including
  // alignment training when enabled, so the gap isolates what the source
  // task contributes rather than what extra parameters buy on the target.
  TrainConfig stl_cfg = cfg;
  stl_cfg.weights.reset();

  // With summed squared losses a task pulls on the shared module in
  // proportion to its row count. Unless the caller supplies weights, scale
  // the source by the size ratio so a small source differs from a large one
  // in what it knows, not in how hard it pulls; the target keeps weight 1 to
  // stay step-for-step comparable with the single-task run.
  TrainConfig mtl_cfg = cfg;
  if (!mtl_cfg.weights) {
    double balance = static_cast<double>(target.train_idx.size()) /
                     static_cast<double>(source.train_idx.size());
    mtl_cfg.weights = WeightVector{Vec{balance, 1.0}};
  }

  TrainResult mtl = cfg.train_alignments
                        ? train_aligned(init, {&source, &target}, mtl_cfg)
                        : train(init, {&source, &target}, mtl_cfg);
  TrainResult stl = cfg.train_alignments ? train_aligned(stl_init, {&target}, stl_cfg)
                                         : train(stl_init, {&target}, stl_cfg);

  auto [xv, yv] = target.validation_data();
  TransferGapResult out;
  out.mtl_metric = task_metric(mtl.model, 1, xv, yv, target.kind);
  out.stl_metric = task_metric(stl.model, 0, xv, yv, target.kind);
  out.gap = out.mtl_metric - out.stl_metric;
  if (target.kind == TaskKind::regression) {
    out.mtl_spearman = validation_spearman(mtl.model, 1, xv, yv);
    out.stl_spearman = validation_spearman(stl.model, 0, xv, yv);
  }
  out.mtl_model = std::move(mtl.model);
  return out;
}

Theorem1Report theorem1_check(const TaskDataset& source, const TaskDataset& target,
                              const MTLModel& solution) {
  if (solution.capacity() != 1)
    throw ArgumentError("theorem check: requires a rank-one shared module");
  if (solution.task_count() != 2)
    throw ArgumentError("theorem check: solution must cover source and target");
  if (solution.dim() != target.dim() || source.dim() != target.dim())
    throw ArgumentError("theorem check: dimension mismatch");
  Vec theta1 = ground_truth_vector(source, "source");
  Vec theta2 = ground_truth_vector(target, "target");

  auto [x2, y2] = target.train_data();
  Vec fit = kernels::matvec(x2, theta2);
  Vec eps = y2;
  kernels::axpy(-1.0, fit, eps);

  Theorem1Report rep;
  rep.kappa = condition_number(x2);
  rep.sin_theta = cos_sin(theta1, theta2).second;
  rep.c = rep.kappa * rep.sin_theta;
  rep.assumption_ok = std::isfinite(rep.kappa) && rep.c <= 1.0 / 3.0;

  Vec ba(solution.dim());
  for (std::size_t i = 0; i < ba.size(); ++i)
    ba[i] = solution.shared(i, 0) * solution.heads[1][0];
  Vec diff = ba;
  kernels::axpy(-1.0, theta2, diff);
  const double ntheta = kernels::norm2(theta2);
  if (ntheta == 0.0) throw ArgumentError("theorem check: zero target coefficients");
  rep.lhs = kernels::norm2(diff) / ntheta;

  const double nfit = kernels::norm2(fit);
  if (nfit == 0.0) throw ArgumentError("theorem check: target signal is zero");
  rep.noise_ratio = kernels::norm2(eps) / nfit;
  if (rep.assumption_ok) {
    rep.rhs = 6.0 * rep.c + rep.noise_ratio / (1.0 - 3.0 * rep.c);
    rep.satisfied = rep.lhs <= rep.rhs + 1e-6;
  }
  return rep;
}

SinContractionReport sin_contraction_check(const DenseMatrix& x, const Vec& a,
                                           const Vec& b) {
  if (a.size() != x.cols() || b.size() != x.cols())
    throw ArgumentError("sin contraction: vector length mismatch");
  if (kernels::norm2(a) == 0.0 || kernels::norm2(b) == 0.0)
    throw ArgumentError("sin contraction: zero input vector");

  SinContractionReport rep;
  Vec xa = kernels::matvec(x, a);
  Vec xb = kernels::matvec(x, b);
  if (kernels::norm2(xa) == 0.0 || kernels::norm2(xb) == 0.0) {
    rep.degenerate = true;
    rep.holds = true;
    return rep;
  }
  rep.kappa = condition_number(x);
  rep.lhs = cos_sin(xa, xb).second;
  rep.rhs = std::isfinite(rep.kappa)
                ? cos_sin(a, b).second / (rep.kappa * rep.kappa)
                : 0.0;
  rep.holds = rep.lhs >= rep.rhs - 1e-12;
  return rep;
}

double angle_to_target(const DenseMatrix& b, const Vec& theta) {
  if (b.cols() != 1) throw ArgumentError("angle to target: B must be d x 1");
  if (b.rows() != theta.size())
    throw ArgumentError("angle to target: dimension mismatch");
  Vec col(b.rows());
  for (std::size_t i = 0; i < col.size(); ++i) col[i] = b(i, 0);
  return cos_sin(col, theta).second;
}

double spearman(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ArgumentError("spearman: length mismatch");
  if (a.size() < 2) throw ArgumentError("spearman: need at least two points");

  auto ranks = [](const Vec& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    Vec r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = shared;
      i = j + 1;
    }
    return r;
  };

  Vec ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - ma, db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

double GreedyDiagnostic::loss_bound(std::size_t r) const {
  if (r == 0) throw ArgumentError("greedy diagnostic: capacity must be positive");
  double captured = 0.0;
  for (std::size_t t = 0; t < std::min(r, lambdas.size()); ++t)
    captured += lambdas[t];
  return total_energy - captured;
}

GreedyDiagnostic greedy_capacity_diagnostic(const std::vector<DataRef>& tasks,
                                            std::uint64_t seed) {
  if (tasks.empty()) throw ArgumentError("greedy diagnostic: no tasks");
  const std::size_t d = tasks[0].x->cols();
  for (const DataRef& t : tasks)
    if (t.x->cols() != d) throw ArgumentError("greedy diagnostic: dimension mismatch");

  GreedyDiagnostic out;
  out.lambdas = Vec(d, 0.0);
  std::vector<DenseMatrix> xs;
  std::vector<Vec> ys;
  for (const DataRef& t : tasks) {
    xs.push_back(*t.x);
    ys.push_back(*t.y);
    out.total_energy += kernels::dot(*t.y, *t.y);
    SvdResult s = svd(*t.x);
    Vec coeff = kernels::matvec_t(s.u, *t.y);
    const double smax = s.sigma.empty() ? 0.0 : s.sigma[0];
    for (std::size_t j = 0; j < coeff.size(); ++j)
      if (smax > 0.0 && s.sigma[j] > kPinvRelTol * smax)
        out.stl_energy += coeff[j] * coeff[j];
  }

  WeightVector w = WeightVector::uniform(tasks.size());
  for (std::size_t round = 0; round < d; ++round) {
    std::vector<DataRef> refs;
    for (std::size_t i = 0; i < xs.size(); ++i) refs.push_back({&xs[i], &ys[i]});
    Rank1AscentOptions opts;
    opts.seed = mix_seed(seed, round);
    Vec dir = best_rank1_shared(refs, w, opts);

    double lambda = 0.0;
    std::vector<Vec> projected(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Vec u = kernels::matvec(xs[i], dir);
      const double nn = kernels::dot(u, u);
      if (nn <= 0.0) continue;
      const double c = kernels::dot(u, ys[i]);
      lambda += c * c / nn;
      kernels::scale(1.0 / std::sqrt(nn), u);
      projected[i] = std::move(u);
    }
    out.lambdas[round] = lambda;
    if (lambda <= 1e-12 * std::max(out.total_energy, 1.0)) break;

    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (projected[i].empty()) continue;
      const Vec& u = projected[i];
      Vec utx = kernels::matvec_t(xs[i], u);
      for (std::size_t row = 0; row < xs[i].rows(); ++row)
        for (std::size_t col = 0; col < d; ++col)
          xs[i](row, col) -= u[row] * utx[col];
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const TransferGapResult& r) {
  j = nlohmann::json{{"gap", r.gap},
                     {"mtl_metric", r.mtl_metric},
                     {"stl_metric", r.stl_metric},
                     {"mtl_spearman", r.mtl_spearman},
                     {"stl_spearman", r.stl_spearman}};
}

void to_json(nlohmann::json& j, const Theorem1Report& r) {
  j = nlohmann::json{{"c", r.c},
                     {"kappa", r.kappa},
                     {"sin_theta", r.sin_theta},
                     {"noise_ratio", r.noise_ratio},
                     {"lhs", r.lhs},
                     {"rhs", r.rhs},
                     {"assumption_ok", r.assumption_ok},
                     {"satisfied", r.satisfied}};
}

void to_json(nlohmann::json& j, const SinContractionReport& r) {
  j = nlohmann::json{{"lhs", r.lhs},
                     {"rhs", r.rhs},
                     {"kappa", r.kappa},
                     {"degenerate", r.degenerate},
                     {"holds", r.holds}};
}

}  // namespace mtlab
