#include "mtlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "mtlab/analysis.hpp"
#include "mtlab/closed_form.hpp"
#include "mtlab/errors.hpp"
#include "mtlab/kernels.hpp"
#include "mtlab/rng.hpp"
#include "mtlab/svd.hpp"
#include "mtlab/task.hpp"
#include "mtlab/weighting.hpp"

namespace mtlab {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw ArgumentError(msg); }

void reject_unknown(const json& j, const char* ctx,
                    std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(std::string(ctx) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* name : allowed)
      if (it.key() == name) {
        known = true;
        break;
      }
    if (!known) bad(std::string(ctx) + ": unknown field '" + it.key() + "'");
  }
}

double require_real(const json& v, const std::string& where) {
  if (!v.is_number()) bad(where + ": expected a number");
  return v.get<double>();
}

std::size_t require_count(const json& v, const std::string& where) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    bad(where + ": expected a nonnegative integer");
  if (v.is_number_integer() && v.get<long long>() < 0)
    bad(where + ": expected a nonnegative integer");
  return v.get<std::size_t>();
}

bool require_flag(const json& v, const std::string& where) {
  if (!v.is_boolean()) bad(where + ": expected a boolean");
  return v.get<bool>();
}

std::string require_text(const json& v, const std::string& where) {
  if (!v.is_string()) bad(where + ": expected a string");
  return v.get<std::string>();
}

template <typename F>
void if_present(const json& j, const char* key, F&& read) {
  auto it = j.find(key);
  if (it != j.end()) read(*it);
}

TrainConfig train_from_json(const json& j) {
  TrainConfig cfg;
  reject_unknown(j, "train",
                 {"lr", "epochs", "batch_size", "batching", "freeze_shared",
                  "train_alignments", "divergence_factor"});
  if_present(j, "lr", [&](const json& v) { cfg.lr = require_real(v, "train.lr"); });
  if_present(j, "epochs",
             [&](const json& v) { cfg.epochs = require_count(v, "train.epochs"); });
  if_present(j, "batch_size", [&](const json& v) {
    cfg.batch_size = require_count(v, "train.batch_size");
  });
  if_present(j, "batching", [&](const json& v) {
    const std::string mode = require_text(v, "train.batching");
    if (mode == "task_alternating")
      cfg.batching = Batching::task_alternating;
    else if (mode == "joint")
      cfg.batching = Batching::joint;
    else
      bad("train.batching: expected 'task_alternating' or 'joint'");
  });
  if_present(j, "freeze_shared", [&](const json& v) {
    cfg.freeze_shared = require_flag(v, "train.freeze_shared");
  });
  if_present(j, "train_alignments", [&](const json& v) {
    cfg.train_alignments = require_flag(v, "train.train_alignments");
  });
  if_present(j, "divergence_factor", [&](const json& v) {
    cfg.divergence_factor = require_real(v, "train.divergence_factor");
  });
  return cfg;
}

GeneratorSpec generator_from_json(const json& j) {
  GeneratorSpec g;
  reject_unknown(j, "generator",
                 {"d", "cos", "kappa", "boost_count", "source_covariance",
                  "target_m_train", "target_m_val", "source_m", "source_sigma",
                  "target_sigma", "tasks", "task_m", "orthogonal", "flip_prob",
                  "contraction_triples"});
  if_present(j, "d", [&](const json& v) { g.d = require_count(v, "generator.d"); });
  if_present(j, "cos",
             [&](const json& v) { g.cos = require_real(v, "generator.cos"); });
  if_present(j, "kappa",
             [&](const json& v) { g.kappa = require_real(v, "generator.kappa"); });
  if_present(j, "boost_count", [&](const json& v) {
    g.boost_count = require_count(v, "generator.boost_count");
  });
  if_present(j, "source_covariance", [&](const json& v) {
    g.source_covariance = require_text(v, "generator.source_covariance");
  });
  if_present(j, "target_m_train", [&](const json& v) {
    g.target_m_train = require_count(v, "generator.target_m_train");
  });
  if_present(j, "target_m_val", [&](const json& v) {
    g.target_m_val = require_count(v, "generator.target_m_val");
  });
  if_present(j, "source_m", [&](const json& v) {
    g.source_m = require_count(v, "generator.source_m");
  });
  if_present(j, "source_sigma", [&](const json& v) {
    g.source_sigma = require_real(v, "generator.source_sigma");
  });
  if_present(j, "target_sigma", [&](const json& v) {
    g.target_sigma = require_real(v, "generator.target_sigma");
  });
  if_present(j, "tasks",
             [&](const json& v) { g.tasks = require_count(v, "generator.tasks"); });
  if_present(j, "task_m",
             [&](const json& v) { g.task_m = require_count(v, "generator.task_m"); });
  if_present(j, "orthogonal", [&](const json& v) {
    g.orthogonal = require_flag(v, "generator.orthogonal");
  });
  if_present(j, "flip_prob", [&](const json& v) {
    g.flip_prob = require_real(v, "generator.flip_prob");
  });
  if_present(j, "contraction_triples", [&](const json& v) {
    g.contraction_triples = require_count(v, "generator.contraction_triples");
  });
  return g;
}

std::size_t effective_boost(const GeneratorSpec& g) {
  return g.boost_count ? g.boost_count : std::max<std::size_t>(1, g.d / 10);
}

std::vector<std::size_t> index_block(std::size_t lo, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), lo);
  return idx;
}

WeightVector normalized(WeightVector w) {
  double sum = 0.0;
  for (double a : w.alpha) sum += a;
  if (sum <= 0.0) return WeightVector::uniform(w.size());
  // Mean-one scaling keeps the gradient magnitude, and therefore a fixed
  // step size, comparable across weighting schemes.
  const double scale = static_cast<double>(w.size()) / sum;
  for (double& a : w.alpha) a *= scale;
  return w;
}

struct PairInstance {
  TaskDataset source;
  TaskDataset target;
};

PairInstance build_pair(const GeneratorSpec& g, double cosv, std::size_t m_source,
                        std::uint64_t seed) {
  Rng theta_rng(mix_seed(seed, 11));
  Vec theta_target = random_unit_vector(g.d, theta_rng);
  Vec theta_source = make_model_pair(theta_target, alpha_for_cos(cosv),
                                     mix_seed(seed, 12));

  std::optional<CovarianceSpec> cov_target, cov_source;
  if (g.kappa > 1.0) {
    const std::size_t bc = effective_boost(g);
    cov_target = CovarianceSpec{random_orthonormal(g.d, mix_seed(seed, 13)),
                                index_block(0, bc), g.kappa};
    if (g.source_covariance == "same")
      cov_source = cov_target;
    else if (g.source_covariance == "different")
      cov_source = CovarianceSpec{random_orthonormal(g.d, mix_seed(seed, 14)),
                                  index_block(bc, bc), g.kappa};
  }

  PairInstance out;
  out.target = gen_linear_task(theta_target, g.target_m_train + g.target_m_val,
                               g.target_sigma, cov_target ? &*cov_target : nullptr,
                               mix_seed(seed, 15));
  split_dataset(out.target, g.target_m_train, mix_seed(seed, 16));
  out.source = gen_linear_task(theta_source, m_source, g.source_sigma,
                               cov_source ? &*cov_source : nullptr,
                               mix_seed(seed, 17));
  return out;
}

std::optional<WeightVector> scheme_weights(const ExperimentConfig& cfg,
                                           const TaskDataset& source,
                                           const TaskDataset& target,
                                           std::uint64_t seed) {
  switch (cfg.weighting) {
    case WeightScheme::uniform:
      return std::nullopt;
    case WeightScheme::svd:
      return normalized(svd_reweight({&source, &target}).weights);
    case WeightScheme::uncertainty: {
      UncertaintyConfig u;
      u.train = cfg.train;
      u.train.seed = mix_seed(seed, 19);
      u.train.weights.reset();
      u.train.train_alignments = false;
      MTLModel init = MTLModel::random_init(source.dim(), cfg.capacity, 2,
                                            Activation::linear, mix_seed(seed, 19));
      return normalized(uncertainty_weights(init, {&source, &target}, u).weights);
    }
  }
  return std::nullopt;
}

std::map<std::string, double> gap_cell(const ExperimentConfig& cfg, double gv,
                                       std::uint64_t seed) {
  const bool by_cosine = cfg.kind == ExperimentKind::cosine_sweep;
  const double cosv = by_cosine ? gv : cfg.generator.cos;
  const std::size_t m_source =
      by_cosine ? cfg.generator.source_m : static_cast<std::size_t>(gv);
  PairInstance pair = build_pair(cfg.generator, cosv, m_source, seed);

  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(seed, 18);
  tc.weights = scheme_weights(cfg, pair.source, pair.target, seed);

  std::map<std::string, double> values;
  if (cfg.kind == ExperimentKind::alignment_correction) {
    TrainConfig plain_cfg = tc;
    plain_cfg.train_alignments = false;
    TransferGapResult plain = transfer_gap(pair.source, pair.target, cfg.capacity,
                                           plain_cfg);
    TrainConfig aligned_cfg = tc;
    aligned_cfg.train_alignments = true;
    TransferGapResult aligned = transfer_gap(pair.source, pair.target,
                                             cfg.capacity, aligned_cfg);

    values["gap_unaligned"] = plain.gap;
    values["gap_aligned"] = aligned.gap;
    values["mtl_unaligned"] = plain.mtl_metric;
    values["mtl_aligned"] = aligned.mtl_metric;
    values["stl_metric"] = plain.stl_metric;

    auto [xs, ys] = pair.source.train_data();
    auto [xt, yt] = pair.target.train_data();
    values["score_before"] = covariance_similarity_score(xs, xt);
    const auto& align = *aligned.mtl_model.alignments;
    values["score_after"] = covariance_similarity_score(
        kernels::matmul(xs, align[0]), kernels::matmul(xt, align[1]));
  } else {
    TransferGapResult r = transfer_gap(pair.source, pair.target, cfg.capacity, tc);
    values["gap"] = r.gap;
    values["mtl_metric"] = r.mtl_metric;
    values["stl_metric"] = r.stl_metric;
    if (pair.target.kind == TaskKind::regression) {
      values["mtl_spearman"] = r.mtl_spearman;
      values["stl_spearman"] = r.stl_spearman;
    }
    if (tc.weights) {
      values["weight_source"] = (*tc.weights)[0];
      values["weight_target"] = (*tc.weights)[1];
    }
  }
  return values;
}

std::map<std::string, double> capacity_cell(const ExperimentConfig& cfg, double gv,
                                            std::uint64_t seed) {
  const GeneratorSpec& g = cfg.generator;
  const std::size_t r = static_cast<std::size_t>(gv);
  const std::size_t k = g.tasks;
  std::map<std::string, double> values;

  if (g.orthogonal) {
    // Identity design: X_i = I_d, y_i = e_i. Covariances agree, so the
    // equal-covariance solver gives the exact optimum.
    std::vector<TaskDataset> tasks;
    tasks.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      Vec y(g.d, 0.0);
      y[i] = 1.0;
      tasks.push_back(make_task(DenseMatrix::identity(g.d), std::move(y),
                                TaskKind::regression));
    }
    std::vector<const TaskDataset*> ptrs;
    for (const TaskDataset& t : tasks) ptrs.push_back(&t);
    ClosedFormSolution sol =
        solve_equal_covariance(ptrs, WeightVector::uniform(k), r);
    values["train_error"] = sol.objective_value;
    return values;
  }

  std::vector<Vec> thetas;
  std::vector<TaskDataset> tasks;
  thetas.reserve(k);
  tasks.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    Rng theta_rng(mix_seed(seed, 40 + i));
    thetas.push_back(random_unit_vector(g.d, theta_rng));
    tasks.push_back(gen_linear_task(thetas.back(), g.task_m, 0.0, nullptr,
                                    mix_seed(seed, 60 + i)));
  }
  std::vector<const TaskDataset*> ptrs;
  std::vector<DataRef> refs;
  for (const TaskDataset& t : tasks) {
    ptrs.push_back(&t);
    refs.push_back({&t.x, &t.y});
  }

  if (r >= k) {
    MTLModel model = capacity_construction(thetas, r);
    values["train_error"] = objective(model, refs, WeightVector::uniform(k));
    return values;
  }

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < 3; ++restart) {
    MTLModel init = MTLModel::random_init(g.d, r, k, Activation::linear,
                                          mix_seed(seed, 80 + restart));
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(seed, 90 + restart);
    tc.weights.reset();
    tc.train_alignments = false;
    TrainResult res = train(init, ptrs, tc);
    best = std::min(best, res.trace.back().total);
  }
  values["train_error"] = best;
  return values;
}

std::map<std::string, double> noise_cell(const ExperimentConfig& cfg, double frac,
                                         std::uint64_t seed) {
  const GeneratorSpec& g = cfg.generator;
  const std::size_t m = g.target_m_train + g.target_m_val;

  Rng theta_rng(mix_seed(seed, 21));
  Vec theta = random_unit_vector(g.d, theta_rng);
  Rng x_rng(mix_seed(seed, 22));
  DenseMatrix x = gaussian_matrix(m, g.d, x_rng);
  Vec labels = logistic_labels(x, theta);

  TaskDataset clean = make_task(x, labels, TaskKind::classification);
  TaskDataset noisy = flip_labels(clean, frac, g.flip_prob, mix_seed(seed, 23));
  // Identical split seeds give identical index sets, keeping the two tasks
  // row-aligned for joint batching.
  split_dataset(clean, g.target_m_train, mix_seed(seed, 24));
  split_dataset(noisy, g.target_m_train, mix_seed(seed, 24));

  std::vector<const TaskDataset*> pair{&noisy, &clean};
  MTLModel init = MTLModel::random_init(g.d, cfg.capacity, 2, Activation::linear,
                                        mix_seed(seed, 25));
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(seed, 26);
  tc.weights.reset();
  tc.train_alignments = false;

  auto [xv, yv] = clean.validation_data();
  std::map<std::string, double> values;

  TrainResult uniform_run = train(init, pair, tc);
  values["acc_uniform"] =
      task_metric(uniform_run.model, 1, xv, yv, TaskKind::classification);

  WeightVector w_svd = normalized(svd_reweight(pair).weights);
  TrainConfig tc_svd = tc;
  tc_svd.weights = w_svd;
  TrainResult svd_run = train(init, pair, tc_svd);
  values["acc_svd"] = task_metric(svd_run.model, 1, xv, yv, TaskKind::classification);
  values["weight_svd_source"] = w_svd[0];
  values["weight_svd_target"] = w_svd[1];

  UncertaintyConfig u;
  u.train = tc;
  UncertaintyResult unc = uncertainty_weights(init, pair, u);
  values["acc_uncertainty"] =
      task_metric(unc.model, 1, xv, yv, TaskKind::classification);
  WeightVector w_unc = normalized(unc.weights);
  values["weight_unc_source"] = w_unc[0];
  values["weight_unc_target"] = w_unc[1];

  MTLModel solo;
  solo.shared = init.shared;
  solo.heads = {init.heads[1]};
  solo.activation = init.activation;
  TrainResult stl_run = train(solo, {&clean}, tc);
  values["acc_stl"] = task_metric(stl_run.model, 0, xv, yv, TaskKind::classification);
  return values;
}

std::map<std::string, double> theory_cell(const ExperimentConfig& cfg, double sinv,
                                          std::uint64_t seed) {
  const GeneratorSpec& g = cfg.generator;
  Rng theta_rng(mix_seed(seed, 31));
  Vec theta1 = random_unit_vector(g.d, theta_rng);
  Vec theta2 = unit_with_angle(theta1, sinv, mix_seed(seed, 32));

  TaskDataset source =
      gen_linear_task(theta1, g.source_m, g.source_sigma, nullptr, mix_seed(seed, 33));
  std::optional<CovarianceSpec> cov;
  if (g.kappa > 1.0)
    cov = CovarianceSpec{random_orthonormal(g.d, mix_seed(seed, 34)),
                         index_block(0, effective_boost(g)), g.kappa};
  TaskDataset target = gen_linear_task(theta2, g.target_m_train, g.target_sigma,
                                       cov ? &*cov : nullptr, mix_seed(seed, 35));

  Rank1AscentOptions opts;
  opts.seed = mix_seed(seed, 36);
  opts.restarts = 1;
  opts.warm_starts = {stl_solve(source)};
  Vec dir = best_rank1_shared({{&source.x, &source.y}, {&target.x, &target.y}},
                              WeightVector::uniform(2), opts);

  MTLModel model;
  model.shared = DenseMatrix::from_column(dir);
  model.heads = {head_given_b(source, model.shared),
                 head_given_b(target, model.shared)};

  Theorem1Report rep = theorem1_check(source, target, model);
  std::map<std::string, double> values;
  values["c"] = rep.c;
  values["kappa"] = rep.kappa;
  values["sin_theta"] = rep.sin_theta;
  values["noise_ratio"] = rep.noise_ratio;
  values["lhs"] = rep.lhs;
  values["rhs"] = rep.rhs;
  values["assumption_ok"] = rep.assumption_ok ? 1.0 : 0.0;
  values["satisfied"] = rep.satisfied ? 1.0 : 0.0;
  values["angle"] = angle_to_target(model.shared, theta2);
  values["angle_bound"] =
      rep.sin_theta +
      (std::isfinite(rep.kappa) && rep.kappa > 0.0 ? rep.c / rep.kappa : 0.0);

  Rng triple_rng(mix_seed(seed, 37));
  std::size_t fails = 0;
  for (std::size_t t = 0; t < g.contraction_triples; ++t) {
    const std::size_t n = 2 + triple_rng.uniform_int(6);
    const std::size_t rows = n + triple_rng.uniform_int(6);
    DenseMatrix xt = gaussian_matrix(rows, n, triple_rng);
    Vec a = random_unit_vector(n, triple_rng);
    Vec b = random_unit_vector(n, triple_rng);
    if (!sin_contraction_check(xt, a, b).holds) ++fails;
  }
  values["contraction_fails"] = static_cast<double>(fails);
  return values;
}

CellResult run_cell(const ExperimentConfig& cfg, double gv, std::uint64_t seed) {
  CellResult cell;
  cell.grid_value = gv;
  cell.seed = seed;
  try {
    switch (cfg.kind) {
      case ExperimentKind::sample_sweep:
      case ExperimentKind::cosine_sweep:
      case ExperimentKind::alignment_correction:
        cell.values = gap_cell(cfg, gv, seed);
        break;
      case ExperimentKind::capacity_sweep:
        cell.values = capacity_cell(cfg, gv, seed);
        break;
      case ExperimentKind::noise_reweighting:
        cell.values = noise_cell(cfg, gv, seed);
        break;
      case ExperimentKind::theory_verify:
        cell.values = theory_cell(cfg, gv, seed);
        break;
    }
  } catch (const NumericalError& e) {
    cell.values.clear();
    cell.error = e.what();
  }
  return cell;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::string to_csv(const ExperimentResult& r) {
  std::set<std::string> keys;
  for (const CellResult& c : r.cells)
    for (const auto& kv : c.values) keys.insert(kv.first);

  std::ostringstream out;
  out << "grid,seed,error";
  for (const std::string& k : keys) out << ',' << k;
  out << '\n';
  for (const CellResult& c : r.cells) {
    out << format_real(c.grid_value) << ',' << c.seed << ',' << sanitize(c.error);
    for (const std::string& k : keys) {
      out << ',';
      auto it = c.values.find(k);
      if (it != c.values.end()) out << format_real(it->second);
    }
    out << '\n';
  }
  return out.str();
}

json to_summary(const ExperimentResult& r) {
  json aggs = json::array();
  for (const AggregatePoint& p : r.aggregates)
    aggs.push_back(json{{"grid", p.grid_value},
                        {"count", p.count},
                        {"mean", p.mean},
                        {"se", p.se}});
  return json{{"config", config_to_json(r.config)}, {"aggregates", aggs}};
}

const char* grid_label(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::sample_sweep:
    case ExperimentKind::alignment_correction:
      return "source samples";
    case ExperimentKind::cosine_sweep:
      return "coefficient cosine";
    case ExperimentKind::capacity_sweep:
      return "capacity";
    case ExperimentKind::noise_reweighting:
      return "flip fraction";
    case ExperimentKind::theory_verify:
      return "coefficient sine";
  }
  return "grid";
}

std::string fmt_pos(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string render_chart(const ExperimentResult& r) {
  struct Pt {
    double x, y, se;
  };
  std::map<std::string, std::vector<Pt>> series;
  for (const AggregatePoint& p : r.aggregates)
    for (const auto& kv : p.mean) {
      const double se = p.se.count(kv.first) ? p.se.at(kv.first) : 0.0;
      if (std::isfinite(kv.second) && std::isfinite(se))
        series[kv.first].push_back({p.grid_value, kv.second, se});
    }

  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (double gv : r.config.grid) {
    xlo = std::min(xlo, gv);
    xhi = std::max(xhi, gv);
  }
  for (const auto& kv : series)
    for (const Pt& p : kv.second) {
      ylo = std::min(ylo, p.y - p.se);
      yhi = std::max(yhi, p.y + p.se);
    }
  if (!std::isfinite(ylo) || !std::isfinite(yhi)) {
    ylo = -1.0;
    yhi = 1.0;
  }
  if (xlo == xhi) {
    xlo -= 1.0;
    xhi += 1.0;
  }
  if (ylo == yhi) {
    ylo -= 1.0;
    yhi += 1.0;
  } else {
    const double pad = 0.05 * (yhi - ylo);
    ylo -= pad;
    yhi += pad;
  }

  const double x0 = 70.0, x1 = 540.0, y0 = 45.0, y1 = 395.0;
  auto px = [&](double v) { return x0 + (v - xlo) / (xhi - xlo) * (x1 - x0); };
  auto py = [&](double v) { return y1 - (v - ylo) / (yhi - ylo) * (y1 - y0); };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"450\" "
       "viewBox=\"0 0 720 450\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"720\" height=\"450\" fill=\"#ffffff\"/>\n";
  s << "<text x=\"" << fmt_pos(x0) << "\" y=\"28\" font-family=\"sans-serif\" "
       "font-size=\"15\">"
    << to_string(r.config.kind) << "</text>\n";

  s << "<line x1=\"" << fmt_pos(x0) << "\" y1=\"" << fmt_pos(y1) << "\" x2=\""
    << fmt_pos(x1) << "\" y2=\"" << fmt_pos(y1)
    << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
  s << "<line x1=\"" << fmt_pos(x0) << "\" y1=\"" << fmt_pos(y0) << "\" x2=\""
    << fmt_pos(x0) << "\" y2=\"" << fmt_pos(y1)
    << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";

  for (int i = 0; i < 5; ++i) {
    const double xv = xlo + (xhi - xlo) * i / 4.0;
    const double xp = px(xv);
    s << "<line x1=\"" << fmt_pos(xp) << "\" y1=\"" << fmt_pos(y1) << "\" x2=\""
      << fmt_pos(xp) << "\" y2=\"" << fmt_pos(y1 + 5.0)
      << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << fmt_pos(xp) << "\" y=\"" << fmt_pos(y1 + 20.0)
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
      << fmt_tick(xv) << "</text>\n";

    const double yv = ylo + (yhi - ylo) * i / 4.0;
    const double yp = py(yv);
    s << "<line x1=\"" << fmt_pos(x0 - 5.0) << "\" y1=\"" << fmt_pos(yp)
      << "\" x2=\"" << fmt_pos(x0) << "\" y2=\"" << fmt_pos(yp)
      << "\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << fmt_pos(x0 - 8.0) << "\" y=\"" << fmt_pos(yp + 4.0)
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
      << fmt_tick(yv) << "</text>\n";
  }

  s << "<text x=\"" << fmt_pos((x0 + x1) / 2.0) << "\" y=\"435\" "
       "font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">"
    << grid_label(r.config.kind) << "</text>\n";
  s << "<text x=\"18\" y=\"" << fmt_pos((y0 + y1) / 2.0)
    << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
       "transform=\"rotate(-90 18 "
    << fmt_pos((y0 + y1) / 2.0) << ")\">metric</text>\n";

  std::size_t idx = 0;
  for (const auto& kv : series) {
    const char* color = palette[idx % 8];
    for (const Pt& p : kv.second) {
      if (p.se <= 0.0) continue;
      const double xp = px(p.x);
      s << "<line x1=\"" << fmt_pos(xp) << "\" y1=\"" << fmt_pos(py(p.y - p.se))
        << "\" x2=\"" << fmt_pos(xp) << "\" y2=\"" << fmt_pos(py(p.y + p.se))
        << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
      for (double yend : {p.y - p.se, p.y + p.se})
        s << "<line x1=\"" << fmt_pos(xp - 3.0) << "\" y1=\"" << fmt_pos(py(yend))
          << "\" x2=\"" << fmt_pos(xp + 3.0) << "\" y2=\"" << fmt_pos(py(yend))
          << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
    }
    s << "<polyline fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const Pt& p : kv.second) {
      if (!first) s << ' ';
      s << fmt_pos(px(p.x)) << ',' << fmt_pos(py(p.y));
      first = false;
    }
    s << "\"/>\n";
    for (const Pt& p : kv.second)
      s << "<circle cx=\"" << fmt_pos(px(p.x)) << "\" cy=\"" << fmt_pos(py(p.y))
        << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";

    const double ly = 50.0 + 18.0 * static_cast<double>(idx);
    s << "<rect x=\"552\" y=\"" << fmt_pos(ly - 9.0)
      << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    s << "<text x=\"568\" y=\"" << fmt_pos(ly)
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << kv.first
      << "</text>\n";
    ++idx;
  }

  s << "</svg>\n";
  return s.str();
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << content;
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, const char* what) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw IoError(std::string("results.csv: malformed ") + what + " '" + s + "'");
  return v;
}

std::uint64_t parse_seed(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE)
    throw IoError("results.csv: malformed seed '" + s + "'");
  return v;
}

}  // namespace

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::sample_sweep:
      return "sample_sweep";
    case ExperimentKind::cosine_sweep:
      return "cosine_sweep";
    case ExperimentKind::capacity_sweep:
      return "capacity_sweep";
    case ExperimentKind::alignment_correction:
      return "alignment_correction";
    case ExperimentKind::noise_reweighting:
      return "noise_reweighting";
    case ExperimentKind::theory_verify:
      return "theory_verify";
  }
  throw ArgumentError("unknown experiment kind");
}

const char* to_string(WeightScheme scheme) {
  switch (scheme) {
    case WeightScheme::uniform:
      return "uniform";
    case WeightScheme::svd:
      return "svd";
    case WeightScheme::uncertainty:
      return "uncertainty";
  }
  throw ArgumentError("unknown weight scheme");
}

ExperimentKind experiment_kind_from(const std::string& name) {
  static const ExperimentKind kinds[] = {
      ExperimentKind::sample_sweep,         ExperimentKind::cosine_sweep,
      ExperimentKind::capacity_sweep,       ExperimentKind::alignment_correction,
      ExperimentKind::noise_reweighting,    ExperimentKind::theory_verify,
  };
  for (ExperimentKind k : kinds)
    if (name == to_string(k)) return k;
  bad("config: unknown kind '" + name + "'");
}

WeightScheme weight_scheme_from(const std::string& name) {
  for (WeightScheme s :
       {WeightScheme::uniform, WeightScheme::svd, WeightScheme::uncertainty})
    if (name == to_string(s)) return s;
  bad("config: unknown weighting '" + name + "'");
}

void ExperimentConfig::validate() const {
  if (grid.empty()) bad("config: grid must be nonempty");
  for (double v : grid)
    if (!std::isfinite(v)) bad("config: grid values must be finite");
  if (seeds.empty()) bad("config: seeds must be nonempty");
  if (capacity == 0) bad("config: capacity must be positive");
  if (workers == 0) bad("config: workers must be positive");

  if (!(train.lr > 0.0) || !std::isfinite(train.lr))
    bad("train: lr must be positive and finite");
  if (train.epochs == 0) bad("train: epochs must be positive");
  if (train.batch_size == 0) bad("train: batch_size must be positive");
  if (!(train.divergence_factor >= 1.0))
    bad("train: divergence_factor must be at least 1");

  const GeneratorSpec& g = generator;
  if (g.d == 0) bad("generator: d must be positive");
  if (!(g.cos >= 0.0 && g.cos <= 1.0)) bad("generator: cos must lie in [0, 1]");
  if (!(g.kappa >= 1.0)) bad("generator: kappa must be at least 1");
  if (g.source_covariance != "plain" && g.source_covariance != "same" &&
      g.source_covariance != "different")
    bad("generator: source_covariance must be 'plain', 'same', or 'different'");
  if (!(g.flip_prob >= 0.0 && g.flip_prob <= 1.0))
    bad("generator: flip_prob must lie in [0, 1]");
  if (!(g.source_sigma >= 0.0) || !(g.target_sigma >= 0.0))
    bad("generator: noise sigmas must be nonnegative");

  const std::size_t bc = effective_boost(g);
  if (g.kappa > 1.0) {
    if (bc > g.d) bad("generator: boost_count exceeds d");
    if (g.source_covariance == "different" && 2 * bc > g.d)
      bad("generator: disjoint boosted blocks need 2 * boost_count <= d");
  }

  auto require_target_split = [&]() {
    if (g.target_m_train == 0 || g.target_m_val == 0)
      bad("generator: target_m_train and target_m_val must be positive");
  };
  auto require_integral_grid = [&](const char* what) {
    for (double v : grid)
      if (!(v >= 1.0) || v != std::floor(v) || v > 1e9)
        bad(std::string("config: grid of ") + what +
            " must hold positive integers");
  };

  switch (kind) {
    case ExperimentKind::sample_sweep:
    case ExperimentKind::alignment_correction:
      require_integral_grid("source sample counts");
      require_target_split();
      break;
    case ExperimentKind::cosine_sweep:
      for (double v : grid)
        if (!(v >= 0.0 && v <= 1.0))
          bad("config: grid of cosines must lie in [0, 1]");
      if (g.source_m == 0) bad("generator: source_m must be positive");
      require_target_split();
      break;
    case ExperimentKind::capacity_sweep:
      require_integral_grid("capacities");
      if (g.tasks == 0) bad("generator: tasks must be positive");
      if (g.orthogonal) {
        if (g.tasks > g.d) bad("generator: identity design needs tasks <= d");
        for (double v : grid)
          if (v > static_cast<double>(g.d))
            bad("config: identity-design capacity exceeds d");
      } else if (g.task_m == 0) {
        bad("generator: task_m must be positive");
      }
      break;
    case ExperimentKind::noise_reweighting:
      for (double v : grid)
        if (!(v >= 0.0 && v <= 1.0))
          bad("config: grid of flip fractions must lie in [0, 1]");
      require_target_split();
      break;
    case ExperimentKind::theory_verify:
      for (double v : grid)
        if (!(v >= 0.0 && v < 1.0))
          bad("config: grid of sines must lie in [0, 1)");
      if (g.source_m == 0) bad("generator: source_m must be positive");
      if (g.target_m_train < g.d)
        bad("generator: target_m_train must be at least d for a full-rank "
            "target design");
      break;
  }
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j, "config",
                 {"kind", "grid", "seeds", "capacity", "weighting", "workers",
                  "train", "generator"});
  ExperimentConfig cfg;

  auto kind_it = j.find("kind");
  if (kind_it == j.end()) bad("config: missing 'kind'");
  cfg.kind = experiment_kind_from(require_text(*kind_it, "config.kind"));

  auto grid_it = j.find("grid");
  if (grid_it == j.end() || !grid_it->is_array())
    bad("config: 'grid' must be an array of numbers");
  for (const json& v : *grid_it) cfg.grid.push_back(require_real(v, "config.grid"));

  auto seeds_it = j.find("seeds");
  if (seeds_it == j.end() || !seeds_it->is_array())
    bad("config: 'seeds' must be an array of nonnegative integers");
  for (const json& v : *seeds_it)
    cfg.seeds.push_back(require_count(v, "config.seeds"));

  if_present(j, "capacity", [&](const json& v) {
    cfg.capacity = require_count(v, "config.capacity");
  });
  if_present(j, "weighting", [&](const json& v) {
    cfg.weighting = weight_scheme_from(require_text(v, "config.weighting"));
  });
  if_present(j, "workers", [&](const json& v) {
    cfg.workers = require_count(v, "config.workers");
  });
  if_present(j, "train", [&](const json& v) { cfg.train = train_from_json(v); });
  if_present(j, "generator",
             [&](const json& v) { cfg.generator = generator_from_json(v); });

  cfg.validate();
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  json t{{"lr", cfg.train.lr},
         {"epochs", cfg.train.epochs},
         {"batch_size", cfg.train.batch_size},
         {"batching", cfg.train.batching == Batching::joint ? "joint"
                                                            : "task_alternating"},
         {"freeze_shared", cfg.train.freeze_shared},
         {"train_alignments", cfg.train.train_alignments},
         {"divergence_factor", cfg.train.divergence_factor}};
  const GeneratorSpec& g = cfg.generator;
  json gen{{"d", g.d},
           {"cos", g.cos},
           {"kappa", g.kappa},
           {"boost_count", g.boost_count},
           {"source_covariance", g.source_covariance},
           {"target_m_train", g.target_m_train},
           {"target_m_val", g.target_m_val},
           {"source_m", g.source_m},
           {"source_sigma", g.source_sigma},
           {"target_sigma", g.target_sigma},
           {"tasks", g.tasks},
           {"task_m", g.task_m},
           {"orthogonal", g.orthogonal},
           {"flip_prob", g.flip_prob},
           {"contraction_triples", g.contraction_triples}};
  return json{{"kind", to_string(cfg.kind)}, {"grid", cfg.grid},
              {"seeds", cfg.seeds},          {"capacity", cfg.capacity},
              {"weighting", to_string(cfg.weighting)}, {"workers", cfg.workers},
              {"train", t},                  {"generator", gen}};
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    bad("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<AggregatePoint> aggregate(const Vec& grid,
                                      const std::vector<CellResult>& cells) {
  std::vector<AggregatePoint> out;
  out.reserve(grid.size());
  for (double gv : grid) {
    AggregatePoint p;
    p.grid_value = gv;
    std::map<std::string, std::vector<double>> samples;
    for (const CellResult& c : cells) {
      if (c.grid_value != gv || !c.error.empty()) continue;
      ++p.count;
      for (const auto& kv : c.values) samples[kv.first].push_back(kv.second);
    }
    for (const auto& kv : samples) {
      const std::vector<double>& vals = kv.second;
      const double n = static_cast<double>(vals.size());
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= n;
      p.mean[kv.first] = mean;
      double var = 0.0;
      if (vals.size() > 1) {
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= n - 1.0;
      }
      p.se[kv.first] = vals.size() > 1 ? std::sqrt(var / n) : 0.0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::size_t per_grid = cfg.seeds.size();
  const std::size_t total = cfg.grid.size() * per_grid;
  std::vector<CellResult> cells(total);
  std::atomic<std::size_t> next{0};

  auto drain = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= total) break;
      cells[i] = run_cell(cfg, cfg.grid[i / per_grid], cfg.seeds[i % per_grid]);
    }
  };

  const std::size_t pool = std::min(cfg.workers, total);
  if (pool <= 1) {
    drain();
  } else {
    std::exception_ptr failure = nullptr;
    std::mutex mu;
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (std::size_t t = 0; t < pool; ++t)
      threads.emplace_back([&]() {
        // Cell work stays single-threaded inside the pool so the numbers
        // match a serial run regardless of the worker count.
        kernels::set_parallel_enabled(false);
        try {
          drain();
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      });
    for (std::thread& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  ExperimentResult out;
  out.config = cfg;
  out.cells = std::move(cells);
  out.aggregates = aggregate(cfg.grid, out.cells);
  return out;
}

void render(const ExperimentResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("render: cannot create " + out_dir + ": " + ec.message());
  write_file(out_dir + "/results.csv", to_csv(result));
  write_file(out_dir + "/summary.json", to_summary(result).dump(2) + "\n");
  write_file(out_dir + "/chart.svg", render_chart(result));
}

ExperimentResult load_result(const std::string& dir) {
  json s;
  try {
    s = json::parse(read_file(dir + "/summary.json"));
  } catch (const json::exception& e) {
    throw IoError(dir + "/summary.json: " + e.what());
  }
  if (!s.is_object() || !s.contains("config"))
    throw IoError(dir + "/summary.json: missing config");

  ExperimentResult out;
  out.config = config_from_json(s["config"]);

  std::istringstream in(read_file(dir + "/results.csv"));
  std::string line;
  if (!std::getline(in, line)) throw IoError(dir + "/results.csv: empty file");
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 3 || header[0] != "grid" || header[1] != "seed" ||
      header[2] != "error")
    throw IoError(dir + "/results.csv: unexpected header");

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size())
      throw IoError(dir + "/results.csv: row width does not match header");
    CellResult c;
    c.grid_value = parse_real(fields[0], "grid value");
    c.seed = parse_seed(fields[1]);
    c.error = fields[2];
    for (std::size_t i = 3; i < fields.size(); ++i)
      if (!fields[i].empty()) c.values[header[i]] = parse_real(fields[i], "value");
    out.cells.push_back(std::move(c));
  }
  out.aggregates = aggregate(out.config.grid, out.cells);
  return out;
}

}  // namespace mtlab
