#include "mtlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/task.hpp"

namespace mtlab {

using nlohmann::json;

void WeightVector::validate() const {
  if (alpha.empty()) throw ArgumentError("weights: empty");
  bool any = false;
  for (double a : alpha) {
    if (!(a >= 0.0) || !std::isfinite(a))
      throw ArgumentError("weights: entries must be finite and >= 0");
    if (a > 0.0) any = true;
  }
  if (!any) throw ArgumentError("weights: all zero");
}

MTLModel MTLModel::random_init(std::size_t d, std::size_t r, std::size_t k,
                               Activation act, std::uint64_t seed,
                               bool with_alignments) {
  if (d == 0 || r == 0 || k == 0)
    throw ArgumentError("random_init: dims must be positive");
  Rng rng(seed);
  MTLModel m;
  m.activation = act;
  m.shared = gaussian_matrix(d, r, rng);
  kernels::scale(1.0 / std::sqrt(static_cast<double>(d)), m.shared);
  m.heads.resize(k);
  const double hs = 1.0 / std::sqrt(static_cast<double>(r));
  for (auto& h : m.heads) {
    h = rng.gaussian_vec(r);
    kernels::scale(hs, h);
  }
  if (with_alignments) m.ensure_alignments();
  return m;
}

void MTLModel::ensure_alignments() {
  if (alignments) return;
  alignments = std::vector<DenseMatrix>(heads.size(), DenseMatrix::identity(dim()));
}

void MTLModel::validate() const {
  if (shared.rows() == 0 || shared.cols() == 0)
    throw ArgumentError("model: shared module must be nonempty");
  if (heads.empty()) throw ArgumentError("model: no heads");
  for (const auto& h : heads)
    if (h.size() != capacity()) throw ArgumentError("model: head length != capacity");
  if (alignments) {
    if (alignments->size() != heads.size())
      throw ArgumentError("model: alignment count != task count");
    for (const auto& r : *alignments)
      if (r.rows() != dim() || r.cols() != dim())
        throw ArgumentError("model: alignment must be d x d");
  }
  for (std::size_t i = 0; i < shared.size(); ++i)
    if (!std::isfinite(shared.data()[i]))
      throw ArgumentError("model: non-finite shared entry");
  for (const auto& h : heads)
    for (double v : h)
      if (!std::isfinite(v)) throw ArgumentError("model: non-finite head entry");
}

namespace {

void check_tasks(const MTLModel& model, const std::vector<DataRef>& tasks,
                 const WeightVector& weights) {
  if (tasks.size() != model.task_count())
    throw ArgumentError("objective: task count != head count");
  if (weights.size() != tasks.size())
    throw ArgumentError("objective: weight count != task count");
  weights.validate();
  for (const auto& t : tasks) {
    if (!t.x || !t.y) throw ArgumentError("objective: null task data");
    if (t.x->cols() != model.dim())
      throw ArgumentError("objective: covariate dim != model dim");
    if (t.y->size() != t.x->rows())
      throw ArgumentError("objective: label count != row count");
  }
}

double act(double v, Activation a) { return a == Activation::relu ? relu(v) : v; }
double act_grad(double v, Activation a) {
  return a == Activation::relu ? (v > 0.0 ? 1.0 : 0.0) : 1.0;
}

}  // namespace

Vec forward(const MTLModel& model, const DenseMatrix& x, std::size_t task) {
  if (task >= model.task_count()) throw ArgumentError("forward: task out of range");
  if (x.cols() != model.dim()) throw ArgumentError("forward: dim mismatch");
  const DenseMatrix* z = &x;
  DenseMatrix aligned;
  if (model.alignments) {
    aligned = kernels::matmul(x, (*model.alignments)[task]);
    z = &aligned;
  }
  DenseMatrix h = kernels::matmul(*z, model.shared);
  if (model.activation == Activation::relu)
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = relu(h.data()[i]);
  return kernels::matvec(h, model.heads[task]);
}

Vec per_task_losses(const MTLModel& model, const std::vector<DataRef>& tasks,
                    const WeightVector& weights) {
  check_tasks(model, tasks, weights);
  Vec losses(tasks.size(), 0.0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    Vec pred = forward(model, *tasks[i].x, i);
    double s = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double r = pred[j] - (*tasks[i].y)[j];
      s += r * r;
    }
    losses[i] = weights[i] * s;
  }
  return losses;
}

double objective(const MTLModel& model, const std::vector<DataRef>& tasks,
                 const WeightVector& weights) {
  Vec losses = per_task_losses(model, tasks, weights);
  double total = 0.0;
  for (double l : losses) total += l;
  return total;
}

TaskGradients task_gradients(const MTLModel& model, std::size_t task, const DenseMatrix& x,
                             const Vec& y, double alpha, const GradFlags& flags) {
  if (task >= model.task_count())
    throw ArgumentError("task_gradients: task out of range");
  if (x.cols() != model.dim())
    throw ArgumentError("task_gradients: covariate dim != model dim");
  if (y.size() != x.rows())
    throw ArgumentError("task_gradients: label count != row count");
  if (flags.alignments && !model.alignments)
    throw ArgumentError("task_gradients: alignment gradient requested but model has none");

  const DenseMatrix* z = &x;
  DenseMatrix aligned;
  if (model.alignments) {
    aligned = kernels::matmul(x, (*model.alignments)[task]);
    z = &aligned;
  }
  DenseMatrix h = kernels::matmul(*z, model.shared);  // m x r
  DenseMatrix gact = h;
  for (std::size_t s = 0; s < gact.size(); ++s)
    gact.data()[s] = act(gact.data()[s], model.activation);
  Vec pred = kernels::matvec(gact, model.heads[task]);
  Vec res(pred.size());
  for (std::size_t s = 0; s < res.size(); ++s) res[s] = pred[s] - y[s];

  TaskGradients g;
  if (flags.heads) {
    Vec gh = kernels::matvec_t(gact, res);
    g.head.resize(gh.size());
    for (std::size_t t = 0; t < gh.size(); ++t) g.head[t] = 2.0 * alpha * gh[t];
  }
  if (flags.shared || flags.alignments) {
    // dH = 2 a (res A_i^T) .* g'(H)
    DenseMatrix dh(h.rows(), h.cols());
    for (std::size_t s = 0; s < h.rows(); ++s)
      for (std::size_t t = 0; t < h.cols(); ++t)
        dh(s, t) =
            2.0 * alpha * res[s] * model.heads[task][t] * act_grad(h(s, t), model.activation);
    if (flags.shared) g.shared = kernels::matmul_at_b(*z, dh);  // d x r
    if (flags.alignments) {
      DenseMatrix dz = kernels::matmul_a_bt(dh, model.shared);  // m x d
      g.alignment = kernels::matmul_at_b(x, dz);                // d x d
    }
  }
  return g;
}

Gradients gradients(const MTLModel& model, const std::vector<DataRef>& tasks,
                    const WeightVector& weights, const GradFlags& flags) {
  check_tasks(model, tasks, weights);
  if (flags.alignments && !model.alignments)
    throw ArgumentError("gradients: alignment gradients requested but model has none");

  Gradients g;
  if (flags.shared) g.shared = DenseMatrix(model.dim(), model.capacity());
  if (flags.heads) g.heads.assign(model.task_count(), Vec(model.capacity(), 0.0));
  if (flags.alignments)
    g.alignments.assign(model.task_count(), DenseMatrix(model.dim(), model.dim()));

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (weights[i] == 0.0) continue;
    TaskGradients tg = task_gradients(model, i, *tasks[i].x, *tasks[i].y, weights[i], flags);
    if (flags.shared) kernels::madd(1.0, tg.shared, g.shared);
    if (flags.heads) g.heads[i] = std::move(tg.head);
    if (flags.alignments) g.alignments[i] = std::move(tg.alignment);
  }
  return g;
}

void save_model(const MTLModel& model, const std::string& path) {
  model.validate();
  json j;
  j["dim"] = model.dim();
  j["capacity"] = model.capacity();
  j["tasks"] = model.task_count();
  j["activation"] = model.activation == Activation::relu ? "relu" : "linear";
  j["shared"] = model.shared.storage();
  j["heads"] = model.heads;
  if (model.alignments) {
    std::vector<std::vector<double>> rs;
    for (const auto& r : *model.alignments) rs.push_back(r.storage());
    j["alignments"] = rs;
  } else {
    j["alignments"] = nullptr;
  }
  std::ofstream f(path);
  if (!f) throw IoError("save_model: cannot open " + path);
  f << j.dump(2) << "\n";
  if (!f.good()) throw IoError("save_model: write failed for " + path);
}

MTLModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_model: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError(std::string("load_model: bad json: ") + e.what());
  }
  MTLModel m;
  try {
    const auto d = j.at("dim").get<std::size_t>();
    const auto r = j.at("capacity").get<std::size_t>();
    const auto k = j.at("tasks").get<std::size_t>();
    const std::string act = j.at("activation").get<std::string>();
    if (act == "relu")
      m.activation = Activation::relu;
    else if (act == "linear")
      m.activation = Activation::linear;
    else
      throw IoError("load_model: unknown activation " + act);
    const auto shared = j.at("shared").get<std::vector<double>>();
    if (shared.size() != d * r) throw IoError("load_model: shared size mismatch");
    m.shared = DenseMatrix(d, r);
    std::copy(shared.begin(), shared.end(), m.shared.data());
    m.heads = j.at("heads").get<std::vector<Vec>>();
    if (m.heads.size() != k) throw IoError("load_model: head count mismatch");
    if (!j.at("alignments").is_null()) {
      const auto rs = j.at("alignments").get<std::vector<std::vector<double>>>();
      std::vector<DenseMatrix> al;
      for (const auto& rv : rs) {
        if (rv.size() != d * d) throw IoError("load_model: alignment size mismatch");
        DenseMatrix rm(d, d);
        std::copy(rv.begin(), rv.end(), rm.data());
        al.push_back(std::move(rm));
      }
      m.alignments = std::move(al);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("load_model: missing field: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace mtlab
