#include "mtlab/trainer.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"

namespace mtlab {

namespace {

struct Batch {
  std::size_t task;
  std::size_t start = 0, stop = 0;  // row range within the train split
  DenseMatrix x;
  Vec y;
};

GradFlags step_flags(const TrainConfig& cfg) {
  GradFlags f;
  f.shared = !cfg.freeze_shared;
  f.heads = true;
  f.alignments = cfg.train_alignments;
  return f;
}

void apply_task_update(MTLModel& model, std::size_t task, const TaskGradients& g,
                       const TrainConfig& cfg) {
  kernels::axpy(-cfg.lr, g.head, model.heads[task]);
  if (!cfg.freeze_shared) kernels::madd(-cfg.lr, g.shared, model.shared);
  if (cfg.train_alignments) kernels::madd(-cfg.lr, g.alignment, (*model.alignments)[task]);
}

}  // namespace

TrainResult train(const MTLModel& init, const std::vector<const TaskDataset*>& tasks,
                  const TrainConfig& cfg) {
  init.validate();
  if (tasks.empty()) throw ArgumentError("train: no tasks given");
  if (tasks.size() != init.task_count())
    throw ArgumentError("train: " + std::to_string(tasks.size()) + " tasks but model has " +
                        std::to_string(init.task_count()) + " heads");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr))
    throw ArgumentError("train: learning rate must be finite and >= 0");
  if (cfg.batch_size == 0) throw ArgumentError("train: batch size must be positive");
  if (!(cfg.divergence_factor > 0.0))
    throw ArgumentError("train: divergence factor must be positive");
  if (cfg.train_alignments && !init.alignments)
    throw ArgumentError("train: alignment updates requested but model has no alignments");

  const std::size_t k = tasks.size();
  WeightVector weights = cfg.weights ? *cfg.weights : WeightVector::uniform(k);
  if (weights.size() != k)
    throw ArgumentError("train: " + std::to_string(weights.size()) + " weights for " +
                        std::to_string(k) + " tasks");
  weights.validate();

  std::vector<DenseMatrix> xs(k);
  std::vector<Vec> ys(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto [x, y] = tasks[i]->train_data();
    if (x.rows() == 0) throw ArgumentError("train: task " + std::to_string(i) + " has no train rows");
    if (x.cols() != init.dim())
      throw ArgumentError("train: task " + std::to_string(i) + " dimension " +
                          std::to_string(x.cols()) + " != model dimension " +
                          std::to_string(init.dim()));
    xs[i] = std::move(x);
    ys[i] = std::move(y);
  }
  if (cfg.batching == Batching::joint) {
    for (std::size_t i = 1; i < k; ++i)
      if (!(xs[i] == xs[0]))
        throw ArgumentError("train: joint batching needs identical covariates, task " +
                            std::to_string(i) + " differs from task 0");
  }

  // Fixed partitions: contiguous row slices of each train split. Only the
  // visiting order changes between epochs.
  std::vector<Batch> batches;
  const std::size_t limit = cfg.batching == Batching::joint ? 1 : k;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t m = xs[i].rows();
    for (std::size_t start = 0; start < m; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, m);
      Batch b;
      b.task = i;
      b.start = start;
      b.stop = stop;
      b.x = DenseMatrix(stop - start, xs[i].cols());
      b.y.assign(ys[i].begin() + static_cast<std::ptrdiff_t>(start),
                 ys[i].begin() + static_cast<std::ptrdiff_t>(stop));
      for (std::size_t row = start; row < stop; ++row)
        for (std::size_t col = 0; col < xs[i].cols(); ++col)
          b.x(row - start, col) = xs[i](row, col);
      batches.push_back(std::move(b));
    }
  }

  std::vector<DataRef> refs(k);
  for (std::size_t i = 0; i < k; ++i) refs[i] = DataRef{&xs[i], &ys[i]};

  TrainResult out;
  out.model = init;

  auto record = [&]() {
    EpochStats st;
    st.task_loss = per_task_losses(out.model, refs, weights);
    for (double l : st.task_loss) st.total += l;
    out.trace.push_back(std::move(st));
  };
  record();
  const double guard = cfg.divergence_factor * std::max(out.trace[0].total, 1.0);

  std::vector<std::size_t> order(batches.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    Rng shuffler(mix_seed(cfg.seed, epoch));
    shuffler.shuffle(order);

    for (std::size_t j : order) {
      const Batch& b = batches[j];
      if (cfg.batching == Batching::joint) {
        // All tasks see the same rows; collect every gradient at the current
        // parameters before touching any of them.
        std::vector<TaskGradients> grads(k);
        for (std::size_t i = 0; i < k; ++i) {
          if (weights[i] == 0.0) continue;
          Vec yslice(ys[i].begin() + static_cast<std::ptrdiff_t>(b.start),
                     ys[i].begin() + static_cast<std::ptrdiff_t>(b.stop));
          grads[i] = task_gradients(out.model, i, b.x, yslice, weights[i], step_flags(cfg));
        }
        for (std::size_t i = 0; i < k; ++i)
          if (weights[i] != 0.0) apply_task_update(out.model, i, grads[i], cfg);
      } else {
        if (weights[b.task] == 0.0) continue;
        TaskGradients g =
            task_gradients(out.model, b.task, b.x, b.y, weights[b.task], step_flags(cfg));
        apply_task_update(out.model, b.task, g, cfg);
      }
    }

    record();
    const double total = out.trace.back().total;
    if (!std::isfinite(total) || total > guard)
      throw DivergenceError("train: objective " + std::to_string(total) +
                                " exceeded divergence guard after epoch " +
                                std::to_string(epoch + 1),
                            static_cast<int>(epoch + 1));
  }

  if (cfg.train_alignments) {
    out.alignment_condition.resize(k);
    for (std::size_t i = 0; i < k; ++i)
      out.alignment_condition[i] = condition_number((*out.model.alignments)[i]);
  }
  return out;
}

TrainResult train_aligned(const MTLModel& init, const std::vector<const TaskDataset*>& tasks,
                          const TrainConfig& cfg) {
  MTLModel m = init;
  m.ensure_alignments();
  TrainConfig c = cfg;
  c.train_alignments = true;
  return train(m, tasks, c);
}

}  // namespace mtlab
