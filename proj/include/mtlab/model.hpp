#ifndef MTLAB_MODEL_HPP
#define MTLAB_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtlab/matrix.hpp"

namespace mtlab {

enum class Activation { linear, relu };

// Per-task nonnegative loss weights, not all zero.
struct WeightVector {
  Vec alpha;

  static WeightVector uniform(std::size_t k) { return WeightVector{Vec(k, 1.0)}; }
  std::size_t size() const { return alpha.size(); }
  double operator[](std::size_t i) const { return alpha[i]; }
  void validate() const;
};

// Shared-module multi-task model: prediction for task i is
//   g(X R_i B) A_i
// with B the d x r shared module, A_i the task head (length r), and the
// optional alignment matrices R_i (d x d, identity when absent).
struct MTLModel {
  DenseMatrix shared;
  std::vector<Vec> heads;
  std::optional<std::vector<DenseMatrix>> alignments;
  Activation activation = Activation::linear;

  std::size_t dim() const { return shared.rows(); }
  std::size_t capacity() const { return shared.cols(); }
  std::size_t task_count() const { return heads.size(); }

  // B entries N(0, 1/d), head entries N(0, 1/r), alignments at identity.
  static MTLModel random_init(std::size_t d, std::size_t r, std::size_t k,
                              Activation act, std::uint64_t seed,
                              bool with_alignments = false);

  void ensure_alignments();
  void validate() const;
};

// Borrowed view of one task's data for objective/gradient evaluation.
struct DataRef {
  const DenseMatrix* x;
  const Vec* y;
};

Vec forward(const MTLModel& model, const DenseMatrix& x, std::size_t task);

// Weighted squared loss sum_i alpha_i ||g(X_i R_i B) A_i - y_i||^2.
double objective(const MTLModel& model, const std::vector<DataRef>& tasks,
                 const WeightVector& weights);

// Per-task weighted losses (the objective is their sum).
Vec per_task_losses(const MTLModel& model, const std::vector<DataRef>& tasks,
                    const WeightVector& weights);

struct GradFlags {
  bool shared = true;
  bool heads = true;
  bool alignments = false;
};

struct Gradients {
  DenseMatrix shared;                     // empty unless requested
  std::vector<Vec> heads;                 // empty unless requested
  std::vector<DenseMatrix> alignments;    // empty unless requested
};

// One task's contribution on the given rows at weight alpha.
struct TaskGradients {
  DenseMatrix shared;     // empty unless requested
  Vec head;               // empty unless requested
  DenseMatrix alignment;  // empty unless requested
};

TaskGradients task_gradients(const MTLModel& model, std::size_t task, const DenseMatrix& x,
                             const Vec& y, double alpha, const GradFlags& flags);

// Analytic gradients of the weighted objective. ReLU uses subgradient 0 at 0.
Gradients gradients(const MTLModel& model, const std::vector<DataRef>& tasks,
                    const WeightVector& weights, const GradFlags& flags);

// Lossless JSON round trip.
void save_model(const MTLModel& model, const std::string& path);
MTLModel load_model(const std::string& path);

}  // namespace mtlab

#endif
