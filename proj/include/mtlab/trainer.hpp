#ifndef MTLAB_TRAINER_HPP
#define MTLAB_TRAINER_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "mtlab/model.hpp"
#include "mtlab/task.hpp"

namespace mtlab {

// task_alternating: every step updates one task from one of its batches; an
// epoch visits the union of all tasks' batches once, in an order reshuffled
// per epoch. joint: all tasks share one covariate matrix and every step
// combines their gradients on the same row batch.
enum class Batching { task_alternating, joint };

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
  bool freeze_shared = false;
  bool train_alignments = false;
  Batching batching = Batching::task_alternating;
  // Uniform when absent.
  std::optional<WeightVector> weights;
  // Abort when the full-train objective exceeds this multiple of
  // max(initial objective, 1).
  double divergence_factor = 1e6;
};

struct EpochStats {
  Vec task_loss;  // weighted, on the full train split
  double total = 0.0;
};

struct TrainResult {
  MTLModel model;
  // trace[0] is the state before any update; trace[e] after epoch e.
  std::vector<EpochStats> trace;
  // Condition number of each task's alignment after training; empty unless
  // alignments were trained.
  Vec alignment_condition;
};

// Plain SGD on the weighted squared loss. Batches are fixed contiguous
// slices of each task's train split; only their visiting order is
// reshuffled, from Rng(mix_seed(seed, epoch)). Gradients are exact sums
// over the batch rows, so batch_size >= m gives full-batch gradient
// descent. Throws DivergenceError when the guard trips.
TrainResult train(const MTLModel& init, const std::vector<const TaskDataset*>& tasks,
                  const TrainConfig& cfg);

// Alignment-stage wrapper: ensures the model carries alignment matrices and
// turns their updates on.
TrainResult train_aligned(const MTLModel& init, const std::vector<const TaskDataset*>& tasks,
                          const TrainConfig& cfg);

}  // namespace mtlab

#endif
