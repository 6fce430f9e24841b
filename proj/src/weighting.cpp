#include "mtlab/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"

namespace mtlab {

ReweightResult svd_reweight(const std::vector<const TaskDataset*>& tasks,
                            const ReweightOptions& opts) {
  if (tasks.empty()) throw ArgumentError("svd_reweight: no tasks given");
  if (!(opts.energy > 0.0) || opts.energy > 1.0)
    throw ArgumentError("svd_reweight: energy must lie in (0, 1]");

  const std::size_t k = tasks.size();
  std::vector<Vec> thetas(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto [x, y] = tasks[i]->train_data();
    if (x.rows() == 0)
      throw ArgumentError("svd_reweight: task " + std::to_string(i) + " has no train rows");
    thetas[i] = opts.use_least_squares ? pinv_apply(x, y) : kernels::matvec_t(x, y);
  }
  const std::size_t d = thetas[0].size();
  for (std::size_t i = 1; i < k; ++i)
    if (thetas[i].size() != d)
      throw ArgumentError("svd_reweight: task " + std::to_string(i) + " has dimension " +
                          std::to_string(thetas[i].size()) + ", expected " + std::to_string(d));

  DenseMatrix stacked(d, k);
  for (std::size_t i = 0; i < k; ++i) stacked.set_column(i, thetas[i]);

  SvdResult dec = svd(stacked);
  ReweightResult out;
  out.spectrum = dec.sigma;

  double total_energy = 0.0;
  for (double s : dec.sigma) total_energy += s * s;
  if (total_energy <= 0.0)
    throw NumericalError("svd_reweight: every task estimate is zero");

  std::size_t r;
  if (opts.rank) {
    r = *opts.rank;
    if (r < 1 || r > dec.sigma.size())
      throw ArgumentError("svd_reweight: rank " + std::to_string(r) + " outside [1, " +
                          std::to_string(dec.sigma.size()) + "]");
  } else {
    r = 1;
    double acc = dec.sigma[0] * dec.sigma[0];
    while (acc < opts.energy * total_energy && r < dec.sigma.size()) {
      acc += dec.sigma[r] * dec.sigma[r];
      ++r;
    }
  }
  out.rank_used = r;

  out.weights.alpha.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < r; ++j) {
      double c = 0.0;
      for (std::size_t row = 0; row < d; ++row) c += dec.u(row, j) * thetas[i][row];
      acc += c * c;
    }
    out.weights.alpha[i] = std::sqrt(acc);
  }
  out.weights.validate();
  return out;
}

UncertaintyResult uncertainty_weights(const MTLModel& init,
                                      const std::vector<const TaskDataset*>& tasks,
                                      const UncertaintyConfig& cfg) {
  init.validate();
  if (tasks.empty()) throw ArgumentError("uncertainty_weights: no tasks given");
  if (tasks.size() != init.task_count())
    throw ArgumentError("uncertainty_weights: " + std::to_string(tasks.size()) +
                        " tasks but model has " + std::to_string(init.task_count()) + " heads");
  if (!(cfg.sigma_init > 0.0))
    throw ArgumentError("uncertainty_weights: sigma_init must be positive");
  if (!(cfg.sigma_floor > 0.0))
    throw ArgumentError("uncertainty_weights: sigma_floor must be positive");
  const TrainConfig& tc = cfg.train;
  if (!(tc.lr >= 0.0) || !std::isfinite(tc.lr))
    throw ArgumentError("uncertainty_weights: learning rate must be finite and >= 0");
  if (tc.batch_size == 0) throw ArgumentError("uncertainty_weights: batch size must be positive");
  if (tc.weights)
    throw ArgumentError("uncertainty_weights: fixed weights conflict with learned sigmas");
  if (tc.train_alignments)
    throw ArgumentError("uncertainty_weights: alignment training not supported here");

  const std::size_t k = tasks.size();
  std::vector<DenseMatrix> xs(k);
  std::vector<Vec> ys(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto [x, y] = tasks[i]->train_data();
    if (x.rows() == 0)
      throw ArgumentError("uncertainty_weights: task " + std::to_string(i) +
                          " has no train rows");
    if (x.cols() != init.dim())
      throw ArgumentError("uncertainty_weights: task " + std::to_string(i) + " dimension " +
                          std::to_string(x.cols()) + " != model dimension " +
                          std::to_string(init.dim()));
    xs[i] = std::move(x);
    ys[i] = std::move(y);
  }

  struct Slice {
    std::size_t task, start, stop;
  };
  std::vector<Slice> slices;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t start = 0; start < xs[i].rows(); start += tc.batch_size)
      slices.push_back({i, start, std::min(start + tc.batch_size, xs[i].rows())});

  UncertaintyResult out;
  out.model = init;
  out.sigma.assign(k, cfg.sigma_init);
  Vec s(k, std::log(cfg.sigma_init));
  const double slr = cfg.sigma_lr > 0.0 ? cfg.sigma_lr : tc.lr;

  GradFlags flags;
  flags.shared = !tc.freeze_shared && !cfg.freeze_model;
  flags.heads = !cfg.freeze_model;
  flags.alignments = false;

  auto raw_losses = [&]() {
    Vec l(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      Vec pred = forward(out.model, xs[i], i);
      double acc = 0.0;
      for (std::size_t row = 0; row < pred.size(); ++row) {
        const double r = pred[row] - ys[i][row];
        acc += r * r;
      }
      l[i] = acc;
    }
    return l;
  };
  auto penalized = [&](const Vec& raw) {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      total += raw[i] / (2.0 * out.sigma[i] * out.sigma[i]) + s[i];
    return total;
  };

  Vec raw0 = raw_losses();
  out.penalized_trace.push_back(penalized(raw0));
  double raw_total0 = 0.0;
  for (double v : raw0) raw_total0 += v;
  const double guard = tc.divergence_factor * std::max(raw_total0, 1.0);

  std::vector<std::size_t> order(slices.size());
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    Rng shuffler(mix_seed(tc.seed, epoch));
    shuffler.shuffle(order);

    for (std::size_t j : order) {
      const Slice& sl = slices[j];
      const std::size_t i = sl.task;
      const std::size_t rows = sl.stop - sl.start;
      DenseMatrix xb(rows, xs[i].cols());
      for (std::size_t row = 0; row < rows; ++row)
        for (std::size_t col = 0; col < xs[i].cols(); ++col)
          xb(row, col) = xs[i](sl.start + row, col);
      Vec yb(ys[i].begin() + static_cast<std::ptrdiff_t>(sl.start),
             ys[i].begin() + static_cast<std::ptrdiff_t>(sl.stop));

      // Batch data loss drives both the model step and the sigma step.
      Vec pred = forward(out.model, xb, i);
      double lb = 0.0;
      for (std::size_t row = 0; row < rows; ++row) {
        const double r = pred[row] - yb[row];
        lb += r * r;
      }

      const double inv2s2 = 1.0 / (2.0 * out.sigma[i] * out.sigma[i]);
      if (!cfg.freeze_model) {
        TaskGradients g = task_gradients(out.model, i, xb, yb, inv2s2, flags);
        kernels::axpy(-tc.lr, g.head, out.model.heads[i]);
        if (flags.shared) kernels::madd(-tc.lr, g.shared, out.model.shared);
      }

      // d/ds [ e^{-2s} lb / 2 + (rows/m) s ] = -e^{-2s} lb + rows/m.
      const double share =
          static_cast<double>(rows) / static_cast<double>(xs[i].rows());
      const double ds = -2.0 * inv2s2 * lb + share;
      s[i] -= slr * ds;
      if (s[i] < std::log(cfg.sigma_floor)) {
        s[i] = std::log(cfg.sigma_floor);
        out.clamped = true;
      }
      out.sigma[i] = std::exp(s[i]);
    }

    Vec raw = raw_losses();
    out.penalized_trace.push_back(penalized(raw));
    double raw_total = 0.0;
    for (double v : raw) raw_total += v;
    if (!std::isfinite(raw_total) || raw_total > guard)
      throw DivergenceError("uncertainty_weights: loss " + std::to_string(raw_total) +
                                " exceeded divergence guard after epoch " +
                                std::to_string(epoch + 1),
                            static_cast<int>(epoch + 1));
  }

  out.weights.alpha.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    out.weights.alpha[i] = 1.0 / (2.0 * out.sigma[i] * out.sigma[i]);
  return out;
}

}  // namespace mtlab
