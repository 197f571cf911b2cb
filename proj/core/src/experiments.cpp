#include "chainsgd/experiments.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "chainsgd/csv.hpp"
#include "chainsgd/passes.hpp"
#include "chainsgd/rng.hpp"

namespace chainsgd {

namespace {

constexpr std::uint64_t kRepTag = 0x726570ULL;
constexpr std::uint64_t kPointTag = 0x706f696e74ULL;
constexpr std::uint64_t kRunTag = 0x72756e00ULL;

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

Chain logistic_chain(int dimension, Regularizer reg) {
  std::vector<OperatorPtr> ops;
  ops.push_back(make_logistic_link(dimension));
  ops.push_back(make_softplus());
  return Chain(std::move(ops), reg);
}

double quadratic_upper_curvature(const Chain& chain, const Dataset& data) {
  const bool classifier_shape = chain.size() == 2 &&
                                chain.op(1).weight_dim() == data.feature_dim() &&
                                chain.op(1).output_dim() == 1 && chain.op(2).weight_dim() == 0;
  if (!classifier_shape) {
    throw std::invalid_argument("quadratic_upper_curvature: not a classifier chain");
  }
  const long m = data.size();
  Eigen::MatrixXd cov = (data.features.transpose() * data.features) / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const double lam = eig.eigenvalues().maxCoeff();
  return 0.25 * lam * (1.0 + 1e-9) + chain.regularizer().curvature_bound();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Reference optimum

LossStarReport loss_star_oracle(const Chain& chain, const Dataset& data, double tol,
                                long max_iterations) {
  if (!chain.regularizer().strongly_convex()) {
    throw std::invalid_argument("loss_star_oracle: objective is not strongly convex");
  }
  const double step = 1.0 / quadratic_upper_curvature(chain, data);
  LossStarReport report;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(chain.weight_dim());
  Eigen::VectorXd g = full_gradient(chain, data, w);
  long t = 0;
  while (g.norm() >= tol && t < max_iterations) {
    w -= step * g;
    g = full_gradient(chain, data, w);
    ++t;
  }
  if (g.norm() >= tol) {
    throw std::runtime_error("loss_star_oracle: did not reach the requested tolerance");
  }
  report.loss_star = full_loss(chain, data, w);
  report.gradient_norm = g.norm();
  report.iterations = t;
  report.minimizer = std::move(w);
  return report;
}

// ---------------------------------------------------------------------------
// Worked counterexamples

GdBiasReport counterexample_gd_bias(double shift, double step_size, long horizon, double x0) {
  std::vector<OperatorPtr> ops;
  ops.push_back(make_logistic_link(1));
  ops.push_back(make_scalar_quadratic());
  const Chain chain(std::move(ops), Regularizer::None());

  Dataset data;
  data.features = Eigen::MatrixXd::Ones(1, 1);
  data.labels = -Eigen::VectorXd::Ones(1);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::Constant(Eigen::VectorXd::Constant(1, shift)),
                              Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = step_size;
  config.horizon = horizon;
  config.mode = GradientMode::kFullObjective;
  config.metric_stride = std::max<long>(1, horizon);  // metrics are not the point here
  config.initial_weights = Eigen::VectorXd::Constant(1, x0);
  RunOptions options;
  options.record_weights = true;
  options.record_events = false;

  const RunTrace trace = run(chain, data, plan, config, options);

  GdBiasReport report;
  report.iterates.reserve(trace.weight_history.size());
  for (const auto& w : trace.weight_history) report.iterates.push_back(w(0));
  report.fixed_point = -shift;
  report.final_gap = std::abs(report.iterates.back() - report.fixed_point);
  report.contraction_factor = std::abs(1.0 - 2.0 * step_size);
  report.contracting = step_size < 0.5;
  return report;
}

Eigen::MatrixXd top1_plain_matrix() {
  Eigen::MatrixXd a(2, 2);
  a << -15.0, 13.0, -5.0, 9.0;
  return a;
}

Eigen::MatrixXd top1_momentum_matrix() {
  Eigen::MatrixXd a(2, 2);
  a << -5.0, -4.0, -5.0, 3.0;
  return a;
}

namespace {

// Rescaled replay of the two-stage recurrence. The update map is positively
// homogeneous of degree one (jointly in the momentum pair), so dividing the
// pair by a common factor and accumulating its log keeps every iterate
// representable. Returns log10 of the first-stage weight norm, t = 0..T.
std::vector<double> top1_log10_series(const Eigen::MatrixXd& a, double weight_scale,
                                      double step_size, double momentum, long horizon,
                                      bool compress) {
  Eigen::VectorXd curr = Eigen::VectorXd::Constant(2, weight_scale);
  Eigen::VectorXd prev = curr;
  double scale_log = 0.0;
  std::vector<double> out;
  out.reserve(horizon + 1);
  for (long t = 0; t <= horizon; ++t) {
    const double n = curr.norm();
    out.push_back(n > 0.0 ? std::log10(n) + scale_log
                          : -std::numeric_limits<double>::infinity());
    if (t == horizon) break;
    Eigen::VectorXd v = a * curr;
    if (compress) v = top_k_compress(v, 1);
    const Eigen::VectorXd next =
        curr - step_size * (a.transpose() * v) + momentum * (curr - prev);
    prev = curr;
    curr = next;
    const double m = std::max(curr.cwiseAbs().maxCoeff(), prev.cwiseAbs().maxCoeff());
    if (m > 1e100 || (m > 0.0 && m < 1e-100)) {
      curr /= m;
      prev /= m;
      scale_log += std::log10(m);
    }
  }
  return out;
}

}  // namespace

Top1Report counterexample_top1(const Eigen::MatrixXd& a, double weight_scale, double step_size,
                               double momentum, long horizon) {
  if (a.rows() != 2 || a.cols() != 2) {
    throw std::invalid_argument("counterexample_top1: expects a 2x2 matrix");
  }
  std::vector<OperatorPtr> ops;
  ops.push_back(make_affine_elementwise(a));
  ops.push_back(make_inner_product_square(2));
  const Chain chain(std::move(ops), Regularizer::None());

  Dataset data;
  data.features = Eigen::MatrixXd::Ones(1, 1);
  data.labels = Eigen::VectorXd::Ones(1);  // sample vector (1, 1)

  RunConfig config;
  config.step_size = step_size;
  config.horizon = horizon;
  config.momentum = momentum;
  config.mode = GradientMode::kFullObjective;
  config.metric_stride = std::max<long>(1, horizon);
  // The compressed trajectory grows without bound; keep every iterate up to
  // the horizon instead of cutting the history short.
  config.divergence_norm = 1e300;
  config.initial_weights = Eigen::VectorXd::Zero(chain.weight_dim());
  config.initial_weights(0) = weight_scale;
  config.initial_weights(1) = weight_scale;
  RunOptions options;
  options.record_weights = true;
  options.record_events = false;

  const RunTrace clean = run(chain, data, PerturbationPlan{}, config, options);

  PerturbationPlan compressed_plan;
  compressed_plan.backward_compressor[2] = Compressor::TopK(1);
  const RunTrace compressed = run(chain, data, compressed_plan, config, options);

  auto norms_of = [&](const RunTrace& trace) {
    std::vector<double> norms;
    norms.reserve(trace.weight_history.size());
    for (const auto& w : trace.weight_history) {
      norms.push_back(chain.weights_of(w, 1).norm());
    }
    return norms;
  };

  Top1Report report;
  report.clean_norms = norms_of(clean);
  report.compressed_norms = norms_of(compressed);
  report.clean_log10 = top1_log10_series(a, weight_scale, step_size, momentum, horizon, false);
  report.compressed_log10 =
      top1_log10_series(a, weight_scale, step_size, momentum, horizon, true);
  report.clean_after_one = chain.weights_of(clean.weight_history.at(1), 1);
  report.compressed_after_one = chain.weights_of(compressed.weight_history.at(1), 1);
  report.clean_final = std::pow(10.0, report.clean_log10.back());
  report.compressed_final_log10 = report.compressed_log10.back();
  report.clean_min = std::pow(
      10.0, *std::min_element(report.clean_log10.begin(), report.clean_log10.end()));
  report.compressed_min = std::pow(
      10.0,
      *std::min_element(report.compressed_log10.begin(), report.compressed_log10.end()));
  return report;
}

SigmoidBiasReport counterexample_sigmoid_bias(double point, long draws, std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("counterexample_sigmoid_bias: draws >= 1");
  const OperatorPtr op = make_scalar_sigmoid();
  const Eigen::VectorXd no_weights(0);
  auto derivative = [&](double x) {
    Eigen::VectorXd in(1);
    in << x;
    return op->jac_input(in, no_weights)(0, 0);
  };

  SigmoidBiasReport report;
  report.point = point;
  report.derivative_at_zero = derivative(0.0);
  report.derivative_at_point = derivative(point);
  report.analytic_bias = report.derivative_at_zero - report.derivative_at_point;
  report.draws = draws;

  SplitMix64 rng(derive_stream({seed, 0x7369676dULL}));
  // Kahan-compensated mean plus a second pass-free spread estimate (Welford).
  double sum = 0.0, comp = 0.0;
  double mean = 0.0, m2 = 0.0;
  for (long r = 0; r < draws; ++r) {
    const double delta = (rng() & 1ULL) ? point : -point;
    const double term = report.derivative_at_zero - derivative(delta);
    const double y = term - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    const double d1 = term - mean;
    mean += d1 / static_cast<double>(r + 1);
    m2 += d1 * (term - mean);
  }
  report.mc_estimate = sum / static_cast<double>(draws);
  report.mc_se =
      draws > 1 ? std::sqrt(m2 / (static_cast<double>(draws) * static_cast<double>(draws - 1)))
                : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Derivative check

GradCheckReport catalog_gradient_check(int points_per_operator, std::uint64_t seed) {
  if (points_per_operator < 1) throw std::invalid_argument("points_per_operator >= 1");
  SplitMix64 rng(derive_stream({seed, 0x67726164ULL}));

  Eigen::MatrixXd a(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = rng.normal();

  struct Case {
    std::string name;
    OperatorPtr op;
    bool label_input;  // last input coordinate must be a label
  };
  const std::vector<Case> cases = {
      {"affine_elementwise", make_affine_elementwise(a), false},
      {"logistic_link", make_logistic_link(4), true},
      {"softplus", make_softplus(), false},
      {"scalar_sigmoid", make_scalar_sigmoid(), false},
      {"scalar_quadratic", make_scalar_quadratic(), false},
      {"inner_product_square", make_inner_product_square(3), false},
  };

  GradCheckReport report;
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int p = 0; p < points_per_operator; ++p) {
      Eigen::VectorXd input(c.op->input_dim());
      for (int j = 0; j < input.size(); ++j) input(j) = rng.normal();
      if (c.label_input) input(input.size() - 1) = (rng() & 1ULL) ? 1.0 : -1.0;
      Eigen::VectorXd weights(c.op->weight_dim());
      for (int j = 0; j < weights.size(); ++j) weights(j) = rng.normal();
      worst = std::max(worst, check_jacobians(*c.op, input, weights).max_error());
    }
    report.entries.push_back({c.name, worst});
    report.worst = std::max(report.worst, worst);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Step-size sweeps

Regime regime_from_string(const std::string& name) {
  if (name == "frequent_zero_mean") return Regime::kFrequentZeroMean;
  if (name == "frequent_biased_backward") return Regime::kFrequentBiasedBackward;
  if (name == "intermittent_forward") return Regime::kIntermittentForward;
  throw std::invalid_argument("unknown regime: " + name);
}

const char* regime_name(Regime regime) {
  switch (regime) {
    case Regime::kFrequentZeroMean:
      return "frequent_zero_mean";
    case Regime::kFrequentBiasedBackward:
      return "frequent_biased_backward";
    case Regime::kIntermittentForward:
      return "intermittent_forward";
  }
  return "unknown";
}

GradientMode default_mode(Regime regime) {
  return regime == Regime::kIntermittentForward ? GradientMode::kStochastic
                                                : GradientMode::kFullObjective;
}

std::vector<SweepCellSpec> expand_cells(const SweepGrid& grid) {
  std::vector<SweepCellSpec> cells;
  auto push_unique = [&](SweepCellSpec cell) {
    for (const auto& existing : cells) {
      if (existing.label == cell.label) return;
    }
    cells.push_back(std::move(cell));
  };

  switch (grid.regime) {
    case Regime::kFrequentZeroMean:
      for (double sf : grid.forward_scales) {
        for (double sb : grid.backward_scales) {
          SweepCellSpec cell;
          cell.forward_scale = sf;
          cell.backward_scale = sb;
          if (sf > 0.0) {
            cell.plan.forward[1] =
                PlanEntry{Distribution::ZeroMeanUniform(sf), Schedule::EveryIteration()};
          }
          if (sb > 0.0) {
            cell.plan.backward[2] =
                PlanEntry{Distribution::ZeroMeanUniform(sb), Schedule::EveryIteration()};
          }
          cell.label = cell.plan.empty() ? "standard" : "f" + fmt_g(sf) + "_b" + fmt_g(sb);
          push_unique(std::move(cell));
        }
      }
      break;
    case Regime::kFrequentBiasedBackward:
      for (double sb : grid.backward_scales) {
        SweepCellSpec cell;
        cell.backward_scale = sb;
        if (sb > 0.0) {
          cell.plan.backward[2] =
              PlanEntry{Distribution::ShiftedUniform(sb), Schedule::EveryIteration()};
        }
        cell.label = cell.plan.empty() ? "standard" : "bshift" + fmt_g(sb);
        push_unique(std::move(cell));
      }
      break;
    case Regime::kIntermittentForward:
      for (double sf : grid.forward_scales) {
        for (long dt : grid.intervals) {
          SweepCellSpec cell;
          cell.forward_scale = sf;
          cell.interval = dt;
          if (sf > 0.0) {
            cell.plan.forward[1] =
                PlanEntry{Distribution::ZeroMeanUniform(sf), Schedule::Periodic(dt)};
          }
          cell.label = cell.plan.empty() ? "standard" : "f" + fmt_g(sf) + "_dt" + fmt_g(dt);
          push_unique(std::move(cell));
        }
      }
      break;
  }

  if (grid.include_baseline) {
    bool have = false;
    for (const auto& cell : cells) have = have || cell.label == "standard";
    if (!have) {
      SweepCellSpec baseline;
      baseline.label = "standard";
      cells.insert(cells.begin(), std::move(baseline));
    }
  }
  return cells;
}

Eigen::VectorXd burn_in_weights(const Chain& chain, const Dataset& data, long burn_in) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(chain.weight_dim());
  if (burn_in <= 0) return w;
  const double step = 1.0 / quadratic_upper_curvature(chain, data);
  for (long t = 0; t < burn_in; ++t) {
    w -= step * full_gradient(chain, data, w);
  }
  return w;
}

const SweepCellSummary& SweepResult::summary(int cell, int step_index) const {
  for (const auto& s : summaries) {
    if (s.cell == cell && s.step_index == step_index) return s;
  }
  throw std::out_of_range("sweep summary not found");
}

int SweepResult::cell_index(const std::string& label) const {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].label == label) return static_cast<int>(i);
  }
  return -1;
}

SweepResult sweep(const Chain& chain, const Dataset& data, const SweepGrid& grid) {
  if (grid.step_sizes.empty()) throw std::invalid_argument("sweep: no step sizes");
  if (grid.repetitions < 1) throw std::invalid_argument("sweep: repetitions >= 1");
  if (chain.size() < 2) throw std::invalid_argument("sweep: chain too short");

  SweepResult result;
  result.grid = grid;
  result.cells = expand_cells(grid);
  result.warm_start = burn_in_weights(chain, data, grid.burn_in);

  struct Job {
    int cell, step, rep;
  };
  std::vector<Job> jobs;
  for (int c = 0; c < static_cast<int>(result.cells.size()); ++c) {
    for (int s = 0; s < static_cast<int>(grid.step_sizes.size()); ++s) {
      for (int r = 0; r < grid.repetitions; ++r) jobs.push_back({c, s, r});
    }
  }
  result.runs.resize(jobs.size());

  auto execute = [&](const Job& job, SweepRunResult& out) {
    RunConfig config = grid.base;
    config.step_size = grid.step_sizes[job.step];
    config.seed = derive_stream({grid.base.seed, kRepTag, static_cast<std::uint64_t>(job.rep)});
    config.initial_weights = result.warm_start;
    RunOptions options;
    options.record_weights = false;
    options.record_events = false;
    const RunTrace trace = run(chain, data, result.cells[job.cell].plan, config, options);
    out.cell = job.cell;
    out.step_index = job.step;
    out.repetition = job.rep;
    out.seed = config.seed;
    out.metrics = stability_metrics(trace);
    out.diverged = trace.diverged;
    out.q_forward = trace.q_forward;
    out.q_backward = trace.q_backward;
    out.final_loss = trace.loss.empty() ? 0.0 : trace.loss.back();
  };

  const int workers = std::clamp(grid.workers, 1, 64);
  if (workers == 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) execute(jobs[k], result.runs[k]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int i = 0; i < workers; ++i) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t k = next.fetch_add(1);
          if (k >= jobs.size()) break;
          execute(jobs[k], result.runs[k]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (int c = 0; c < static_cast<int>(result.cells.size()); ++c) {
    for (int s = 0; s < static_cast<int>(grid.step_sizes.size()); ++s) {
      SweepCellSummary summary;
      summary.cell = c;
      summary.step_index = s;
      double norm_sum = 0.0;
      int norm_count = 0;
      double iter_sum = 0.0;
      int iter_count = 0;
      for (const auto& r : result.runs) {
        if (r.cell != c || r.step_index != s) continue;
        if (r.diverged) {
          ++summary.diverged_count;
          continue;
        }
        norm_sum += r.metrics.stable_gradient_norm;
        ++norm_count;
        if (r.metrics.stable_iteration.has_value()) {
          iter_sum += static_cast<double>(*r.metrics.stable_iteration);
          ++iter_count;
        } else {
          ++summary.stable_not_reached;
        }
      }
      summary.mean_stable_norm =
          norm_count > 0 ? norm_sum / norm_count : std::numeric_limits<double>::quiet_NaN();
      summary.mean_stable_iteration = iter_count > 0 ? iter_sum / iter_count : -1.0;
      result.summaries.push_back(summary);
    }
  }
  return result;
}

void write_sweep_csv(const SweepResult& result, const std::string& dir) {
  CsvWriter runs("sweep_runs", 1,
                 {"regime", "cell", "step_size", "forward_scale", "backward_scale", "interval",
                  "repetition", "seed", "stable_grad_norm", "stable_iteration", "q_forward",
                  "q_backward", "final_loss", "diverged"});
  for (const auto& r : result.runs) {
    const auto& cell = result.cells[r.cell];
    runs.row({regime_name(result.grid.regime), cell.label,
              CsvWriter::num(result.grid.step_sizes[r.step_index]),
              CsvWriter::num(cell.forward_scale), CsvWriter::num(cell.backward_scale),
              CsvWriter::integer(cell.interval), CsvWriter::integer(r.repetition),
              std::to_string(r.seed), CsvWriter::num(r.metrics.stable_gradient_norm),
              CsvWriter::integer(r.metrics.stable_iteration.value_or(-1)),
              CsvWriter::integer(r.q_forward), CsvWriter::integer(r.q_backward),
              CsvWriter::num(r.final_loss), CsvWriter::integer(r.diverged ? 1 : 0)});
  }
  runs.save(dir, "sweep_runs.csv");

  CsvWriter cells("sweep_cells", 1,
                  {"regime", "cell", "step_size", "forward_scale", "backward_scale", "interval",
                   "repetitions", "mean_stable_grad_norm", "mean_stable_iteration",
                   "stable_not_reached", "diverged_count"});
  for (const auto& s : result.summaries) {
    const auto& cell = result.cells[s.cell];
    cells.row({regime_name(result.grid.regime), cell.label,
               CsvWriter::num(result.grid.step_sizes[s.step_index]),
               CsvWriter::num(cell.forward_scale), CsvWriter::num(cell.backward_scale),
               CsvWriter::integer(cell.interval), CsvWriter::integer(result.grid.repetitions),
               CsvWriter::num(s.mean_stable_norm), CsvWriter::num(s.mean_stable_iteration),
               CsvWriter::integer(s.stable_not_reached), CsvWriter::integer(s.diverged_count)});
  }
  cells.save(dir, "sweep_cells.csv");
}

// ---------------------------------------------------------------------------
// Bound verification

bool BoundCheckReport::any_violation() const {
  for (const auto& row : rows) {
    if (row.violated) return true;
  }
  return false;
}

BoundCheckReport bound_check(const Chain& chain, const Dataset& data,
                             const PerturbationPlan& plan, const BoundCheckOptions& options) {
  if (options.weight_points < 1 || options.trials < 1) {
    throw std::invalid_argument("bound_check: needs at least one point and one trial");
  }

  const int wd = chain.weight_dim();
  const long m = data.size();
  std::vector<Eigen::VectorXd> samples;
  samples.reserve(m);
  for (long l = 0; l < m; ++l) samples.push_back(data.sample_vector(l));

  StateCorpus corpus;
  corpus.init(chain);

  BoundCheckReport report;
  report.config_hash = options.config_hash;

  std::vector<double> empirical_var(options.weight_points, 0.0);
  std::vector<double> empirical_bias(options.weight_points, 0.0);

  std::vector<PassState> clean_states(m);
  PassState pert_state;
  Eigen::VectorXd buf(wd);

  for (int k = 0; k < options.weight_points; ++k) {
    Eigen::VectorXd w(wd);
    if (k == 0) {
      w.setZero();
    } else {
      SplitMix64 rng(derive_stream({options.seed, kPointTag, static_cast<std::uint64_t>(k)}));
      for (int j = 0; j < wd; ++j) w(j) = rng.uniform(-options.weight_scale, options.weight_scale);
    }

    Eigen::VectorXd clean_grad = Eigen::VectorXd::Zero(wd);
    for (long l = 0; l < m; ++l) {
      forward_clean(chain, samples[l], w, clean_states[l]);
      backward_clean(chain, w, clean_states[l]);
      weight_gradients(chain, w, clean_states[l]);
      stack_gradient(chain, clean_states[l], buf);
      clean_grad += buf;
      corpus.absorb(chain, w, clean_states[l]);
    }
    clean_grad /= static_cast<double>(m);
    corpus.gradient_samples.emplace_back(w, clean_grad + chain.regularizer().gradient(w));

    Eigen::VectorXd mean_err = Eigen::VectorXd::Zero(wd);
    Eigen::VectorXd estimate(wd);
    double sq_sum = 0.0;
    for (int r = 0; r < options.trials; ++r) {
      const IterationDraws draws = draw_iteration_perturbations(
          chain, plan, /*t=*/0, options.seed, static_cast<std::uint64_t>(r));
      estimate.setZero();
      for (long l = 0; l < m; ++l) {
        forward_perturbed(chain, samples[l], w, draws, pert_state);
        backward_perturbed(chain, w, draws, pert_state);
        weight_gradients(chain, w, pert_state);
        stack_gradient(chain, pert_state, buf);
        estimate += buf;
        if (r < options.corpus_trials) {
          corpus.absorb_pair(chain, w, clean_states[l], pert_state);
        }
      }
      estimate /= static_cast<double>(m);
      estimate -= clean_grad;
      sq_sum += estimate.squaredNorm();
      mean_err += estimate;
    }
    empirical_var[k] = sq_sum / options.trials;
    empirical_bias[k] = (mean_err / options.trials).squaredNorm();
  }

  report.estimate = estimate_constants(chain, corpus);
  if (!report.estimate.lipschitz_available) {
    throw std::runtime_error("bound_check: corpus too small for Lipschitz constants");
  }
  const BoundCoefficients coeffs = all_coefficients(report.estimate.constants);
  const PerLayerMoments site_moments = plan_moment_schedule(chain, plan, 1).front();
  const double var_theoretical = variance_bound(coeffs, site_moments);
  const double bias_theoretical = bias_bound(coeffs, site_moments);

  for (int k = 0; k < options.weight_points; ++k) {
    report.rows.push_back({"gradient_error_second_moment", k, var_theoretical, empirical_var[k],
                           var_theoretical - empirical_var[k],
                           empirical_var[k] > var_theoretical});
    report.rows.push_back({"gradient_error_mean_sq", k, bias_theoretical, empirical_bias[k],
                           bias_theoretical - empirical_bias[k],
                           empirical_bias[k] > bias_theoretical});
  }

  if (options.check_rates) {
    const double curvature = quadratic_upper_curvature(chain, data);
    double step = 1.0 / (3.0 * curvature);
    if (options.step_size > 0.0) step = std::min(options.step_size, step);

    SmoothnessConstants rate_constants = report.estimate.constants;
    rate_constants.loss_grad_lipschitz = curvature;
    rate_constants.noise_bound = options.sampling_noise_std * std::sqrt(static_cast<double>(wd));
    const bool pl = chain.regularizer().strongly_convex();
    double loss_star = 0.0;
    if (pl) {
      rate_constants.pl_constant = 2.0 * chain.regularizer().weight;
      loss_star = loss_star_oracle(chain, data).loss_star;
    }

    RunConfig rc;
    rc.step_size = step;
    rc.horizon = options.horizon;
    rc.sampling_noise_std = options.sampling_noise_std;
    rc.seed = derive_stream({options.seed, kRunTag, 0ULL});
    rc.mode = GradientMode::kFullObjective;
    rc.metric_stride = options.metric_stride;
    RunOptions ro;
    ro.record_events = false;

    const RunTrace clean_trace = run(chain, data, PerturbationPlan{}, rc, ro);
    const RunTrace pert_trace = run(chain, data, plan, rc, ro);

    const auto mean_sq = [](const RunTrace& trace) {
      double acc = 0.0;
      for (double g : trace.grad_norm) acc += g * g;
      return trace.grad_norm.empty() ? 0.0 : acc / static_cast<double>(trace.grad_norm.size());
    };

    PerLayerMoments zero;
    zero.forward.resize(std::max(0, chain.size() - 1));
    zero.backward.resize(std::max(0, chain.size() - 1));
    const std::vector<PerLayerMoments> clean_moments = {zero};
    const std::vector<PerLayerMoments> pert_moments =
        plan_moment_schedule(chain, plan, options.horizon);

    const double clean_gap = clean_trace.loss.front() - loss_star;
    const double pert_gap = pert_trace.loss.front() - loss_star;

    const double nc_clean = nonconvex_rate_bound(rate_constants, coeffs, clean_moments, step,
                                                 options.horizon, clean_gap);
    const double nc_pert = nonconvex_rate_bound(rate_constants, coeffs, pert_moments, step,
                                                options.horizon, pert_gap);
    const double emp_clean = mean_sq(clean_trace);
    const double emp_pert = mean_sq(pert_trace);
    report.rows.push_back({"mean_sq_gradient_clean", -1, nc_clean, emp_clean,
                           nc_clean - emp_clean, emp_clean > nc_clean});
    report.rows.push_back({"mean_sq_gradient_perturbed", -1, nc_pert, emp_pert,
                           nc_pert - emp_pert, emp_pert > nc_pert});

    if (pl) {
      const double pl_clean = pl_rate_bound(rate_constants, coeffs, clean_moments, step,
                                            options.horizon, clean_gap);
      const double pl_pert = pl_rate_bound(rate_constants, coeffs, pert_moments, step,
                                           options.horizon, pert_gap);
      const double gap_clean = full_loss(chain, data, clean_trace.final_weights) - loss_star;
      const double gap_pert = full_loss(chain, data, pert_trace.final_weights) - loss_star;
      report.rows.push_back({"final_gap_clean", -1, pl_clean, gap_clean, pl_clean - gap_clean,
                             gap_clean > pl_clean});
      report.rows.push_back({"final_gap_perturbed", -1, pl_pert, gap_pert, pl_pert - gap_pert,
                             gap_pert > pl_pert});
    }

    bool zero_mean = true;
    for (const auto& [layer, entry] : plan.forward) zero_mean = zero_mean && entry.dist.zero_mean();
    for (const auto& [layer, entry] : plan.backward)
      zero_mean = zero_mean && entry.dist.zero_mean();
    report.admissibility = admissibility(
        pl ? Assumption::kPolyakLojasiewicz : Assumption::kNonconvex, zero_mean,
        static_cast<double>(pert_trace.q_forward), static_cast<double>(pert_trace.q_backward),
        options.horizon, options.slack);
    report.admissibility_checked = true;
    report.rows.push_back({"admissible_forward_count", -1, report.admissibility.forward.budget,
                           report.admissibility.forward.count, 0.0, false});
    report.rows.push_back({"admissible_backward_count", -1, report.admissibility.backward.budget,
                           report.admissibility.backward.count, 0.0, false});
  }

  return report;
}

void write_bound_csv(const BoundCheckReport& report, const std::string& dir) {
  CsvWriter csv("bound_report", 1,
                {"quantity", "point", "config_hash", "theoretical", "empirical", "margin",
                 "violated"});
  char hash_buf[24];
  std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                static_cast<unsigned long long>(report.config_hash));
  for (const auto& row : report.rows) {
    csv.row({row.quantity, CsvWriter::integer(row.point), hash_buf,
             CsvWriter::num(row.theoretical), CsvWriter::num(row.empirical),
             CsvWriter::num(row.margin), CsvWriter::integer(row.violated ? 1 : 0)});
  }
  csv.save(dir, "bound_report.csv");
}

// ---------------------------------------------------------------------------
// Configuration glue

DatasetSpec dataset_spec_from(const ConfigFile& cfg) {
  DatasetSpec spec;
  spec.dimension = static_cast<int>(cfg.get_long("dataset", "dimension", spec.dimension));
  spec.sample_count = cfg.get_long("dataset", "samples", spec.sample_count);
  const std::string reg = cfg.get_string("dataset", "regularizer", "smooth_nonconvex");
  if (reg == "none") {
    spec.regularizer = Regularizer::Kind::kNone;
  } else if (reg == "l2") {
    spec.regularizer = Regularizer::Kind::kL2;
  } else if (reg == "smooth_nonconvex") {
    spec.regularizer = Regularizer::Kind::kSmoothNonconvex;
  } else {
    throw std::runtime_error("unknown regularizer: " + reg);
  }
  spec.regularizer_weight = cfg.get_double("dataset", "rho", spec.regularizer_weight);
  spec.seed = static_cast<std::uint64_t>(cfg.get_long("dataset", "seed", 1));
  return spec;
}

namespace {

Distribution dist_from(const ConfigFile& cfg, const std::string& prefix, int dim) {
  const std::string kind = cfg.get_string("plan", prefix + "_dist", "none");
  if (kind == "none") return Distribution::None();
  if (kind == "zero_mean_uniform") {
    return Distribution::ZeroMeanUniform(cfg.get_double("plan", prefix + "_scale"));
  }
  if (kind == "shifted_uniform") {
    return Distribution::ShiftedUniform(cfg.get_double("plan", prefix + "_scale"));
  }
  if (kind == "constant") {
    const auto values = cfg.get_double_list("plan", prefix + "_constant", {});
    if (static_cast<int>(values.size()) != dim) {
      throw std::runtime_error("plan " + prefix + "_constant needs " + std::to_string(dim) +
                               " entries");
    }
    Eigen::VectorXd v(dim);
    for (int j = 0; j < dim; ++j) v(j) = values[j];
    return Distribution::Constant(std::move(v));
  }
  if (kind == "gaussian") {
    const auto values = cfg.get_double_list("plan", prefix + "_mean", {});
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    if (!values.empty()) {
      if (static_cast<int>(values.size()) != dim) {
        throw std::runtime_error("plan " + prefix + "_mean needs " + std::to_string(dim) +
                                 " entries");
      }
      for (int j = 0; j < dim; ++j) mean(j) = values[j];
    }
    return Distribution::Gaussian(std::move(mean), cfg.get_double("plan", prefix + "_stddev"));
  }
  throw std::runtime_error("unknown distribution: " + kind);
}

Schedule schedule_from(const ConfigFile& cfg, const std::string& prefix) {
  const std::string kind = cfg.get_string("plan", prefix + "_schedule", "every");
  if (kind == "every") return Schedule::EveryIteration();
  if (kind == "periodic") {
    return Schedule::Periodic(cfg.get_long("plan", prefix + "_interval"),
                              cfg.get_long("plan", prefix + "_phase", 0));
  }
  if (kind == "one_shot") return Schedule::OneShot(cfg.get_long("plan", prefix + "_shot", 0));
  if (kind == "never") return Schedule::Never();
  throw std::runtime_error("unknown schedule: " + kind);
}

}  // namespace

PerturbationPlan plan_from(const ConfigFile& cfg, const Chain& chain) {
  PerturbationPlan plan;
  const int fwd_layer = static_cast<int>(cfg.get_long("plan", "forward_layer", 1));
  const int bwd_layer = static_cast<int>(cfg.get_long("plan", "backward_layer", 2));
  if (fwd_layer < 1 || fwd_layer > chain.size()) throw std::runtime_error("forward_layer range");
  if (bwd_layer < 2 || bwd_layer > chain.size()) throw std::runtime_error("backward_layer range");

  const Distribution fwd =
      dist_from(cfg, "forward", chain.op(fwd_layer).output_dim());
  if (fwd.kind != Distribution::Kind::kNone) {
    plan.forward[fwd_layer] = PlanEntry{fwd, schedule_from(cfg, "forward")};
  }
  const Distribution bwd =
      dist_from(cfg, "backward", chain.op(bwd_layer - 1).output_dim());
  if (bwd.kind != Distribution::Kind::kNone) {
    plan.backward[bwd_layer] = PlanEntry{bwd, schedule_from(cfg, "backward")};
  }

  const long fwd_k = cfg.get_long("plan", "forward_topk", 0);
  if (fwd_k > 0) {
    const int layer = static_cast<int>(cfg.get_long("plan", "forward_topk_layer", fwd_layer));
    plan.forward_compressor[layer] = Compressor::TopK(static_cast<int>(fwd_k));
  }
  const long bwd_k = cfg.get_long("plan", "backward_topk", 0);
  if (bwd_k > 0) {
    const int layer = static_cast<int>(cfg.get_long("plan", "backward_topk_layer", bwd_layer));
    plan.backward_compressor[layer] = Compressor::TopK(static_cast<int>(bwd_k));
  }
  return plan;
}

RunConfig run_config_from(const ConfigFile& cfg) {
  RunConfig config;
  config.step_size = cfg.get_double("run", "step_size", config.step_size);
  config.horizon = cfg.get_long("run", "horizon", config.horizon);
  config.momentum = cfg.get_double("run", "momentum", config.momentum);
  config.sampling_noise_std = cfg.get_double("run", "noise_std", config.sampling_noise_std);
  config.seed = static_cast<std::uint64_t>(cfg.get_long("run", "seed", 0));
  config.ewma_coefficient = cfg.get_double("run", "ewma", config.ewma_coefficient);
  config.metric_stride = cfg.get_long("run", "stride", config.metric_stride);
  const std::string mode = cfg.get_string("run", "mode", "full");
  if (mode == "full" || mode == "full_objective" || mode == "deterministic") {
    config.mode = GradientMode::kFullObjective;
  } else if (mode == "stochastic") {
    config.mode = GradientMode::kStochastic;
  } else {
    throw std::runtime_error("unknown mode: " + mode);
  }
  return config;
}

SweepGrid sweep_grid_from(const ConfigFile& cfg) {
  SweepGrid grid;
  grid.regime = regime_from_string(cfg.get_string("grid", "regime"));
  grid.step_sizes = cfg.get_double_list("grid", "steps", grid.step_sizes);
  grid.forward_scales = cfg.get_double_list("grid", "forward_scales", grid.forward_scales);
  grid.backward_scales = cfg.get_double_list("grid", "backward_scales", grid.backward_scales);
  grid.intervals = cfg.get_long_list("grid", "intervals", grid.intervals);
  grid.repetitions = static_cast<int>(cfg.get_long("grid", "reps", grid.repetitions));
  grid.burn_in = cfg.get_long("grid", "burn_in", grid.burn_in);
  grid.include_baseline = cfg.get_bool("grid", "baseline", grid.include_baseline);
  grid.workers = static_cast<int>(cfg.get_long("grid", "workers", grid.workers));
  grid.base = run_config_from(cfg);
  if (!cfg.has("run", "mode")) grid.base.mode = default_mode(grid.regime);
  return grid;
}

BoundCheckOptions bound_options_from(const ConfigFile& cfg) {
  BoundCheckOptions options;
  options.weight_points = static_cast<int>(cfg.get_long("bounds", "points", options.weight_points));
  options.trials = static_cast<int>(cfg.get_long("bounds", "trials", options.trials));
  options.corpus_trials =
      static_cast<int>(cfg.get_long("bounds", "corpus_trials", options.corpus_trials));
  options.weight_scale = cfg.get_double("bounds", "weight_scale", options.weight_scale);
  options.seed = static_cast<std::uint64_t>(
      cfg.get_long("bounds", "seed", cfg.get_long("run", "seed", 0)));
  options.check_rates = cfg.get_bool("bounds", "rates", options.check_rates);
  options.horizon = cfg.get_long("bounds", "horizon", options.horizon);
  options.step_size = cfg.get_double("bounds", "step_size", options.step_size);
  options.sampling_noise_std =
      cfg.get_double("bounds", "noise_std", cfg.get_double("run", "noise_std", 0.0));
  options.metric_stride = cfg.get_long("bounds", "stride", options.metric_stride);
  options.slack = cfg.get_double("bounds", "slack", options.slack);
  options.config_hash = fnv1a(cfg.serialize());
  return options;
}

void write_trace_csv(const RunTrace& trace, const std::string& dir, const std::string& name) {
  CsvWriter csv("run_trace", 1, {"t", "grad_norm", "loss", "ewma", "delta_active", "eps_active"});
  for (std::size_t k = 0; k < trace.metric_iterations.size(); ++k) {
    csv.row({CsvWriter::integer(trace.metric_iterations[k]), CsvWriter::num(trace.grad_norm[k]),
             CsvWriter::num(trace.loss[k]), CsvWriter::num(trace.ewma[k]),
             CsvWriter::integer(trace.delta_active[k]), CsvWriter::integer(trace.eps_active[k])});
  }
  csv.save(dir, name);
}

}  // namespace chainsgd
