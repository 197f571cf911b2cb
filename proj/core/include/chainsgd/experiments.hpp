#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chainsgd/bounds.hpp"
#include "chainsgd/chain.hpp"
#include "chainsgd/configfile.hpp"
#include "chainsgd/dataset.hpp"
#include "chainsgd/optimizer.hpp"
#include "chainsgd/perturbation.hpp"

namespace chainsgd {

/// Margin classifier chain: a label-weighted inner product feeding softplus.
Chain logistic_chain(int dimension, Regularizer reg);

/// Certified curvature cap for the classifier chain objective:
/// 0.25 * lambda_max(mean h h^T) plus the penalty curvature. Valid because
/// the link's second derivative never exceeds 1/4.
double quadratic_upper_curvature(const Chain& chain, const Dataset& data);

/// FNV-1a on bytes; stamps configurations into result files.
std::uint64_t fnv1a(const std::string& text);

// ---------------------------------------------------------------------------
// Reference optimum

struct LossStarReport {
  double loss_star = 0.0;
  double gradient_norm = 0.0;  // at the returned optimum
  long iterations = 0;
  Eigen::VectorXd minimizer;
};

/// Deterministic full-objective descent until the gradient norm drops below
/// `tol`. Only defined for strongly convex objectives; throws otherwise.
LossStarReport loss_star_oracle(const Chain& chain, const Dataset& data, double tol = 1e-10,
                                long max_iterations = 1000000);

// ---------------------------------------------------------------------------
// Worked counterexamples

/// One-dimensional run with a constant forward shift: the iterate is driven
/// to -shift, the minimizer of the shifted objective, not of the true one.
struct GdBiasReport {
  std::vector<double> iterates;  // x_0 .. x_T
  double fixed_point = 0.0;      // -shift
  double final_gap = 0.0;        // |x_T - fixed_point|
  double contraction_factor = 0.0;
  bool contracting = false;
};
GdBiasReport counterexample_gd_bias(double shift, double step_size, long horizon, double x0);

/// Two-stage chain where a top-1 backward compressor freezes the descent
/// direction along a bad axis. Norms are of the first-stage weights.
///
/// The compressed trajectory grows without bound, so the optimizer trace
/// stops once doubles overflow. The update map is positively homogeneous,
/// which lets a rescaled replay of the same recurrence carry log10 norms
/// to the full horizon; the two agree wherever both exist. Finals and
/// minima come from the full-horizon series (-inf log means exactly zero).
struct Top1Report {
  std::vector<double> clean_norms, compressed_norms;  // optimizer trace, incl. t=0
  std::vector<double> clean_log10, compressed_log10;  // full horizon log10 norms
  Eigen::VectorXd clean_after_one, compressed_after_one;
  double clean_final = 0.0;
  double compressed_final_log10 = 0.0;
  double clean_min = 0.0, compressed_min = 0.0;
};
Top1Report counterexample_top1(const Eigen::MatrixXd& a, double weight_scale, double step_size,
                               double momentum, long horizon);
/// The matrices the report is usually run with.
Eigen::MatrixXd top1_plain_matrix();
Eigen::MatrixXd top1_momentum_matrix();

/// Gradient attenuation of the scalar sigmoid under a symmetric +-point
/// input perturbation, analytically and by Monte Carlo.
struct SigmoidBiasReport {
  double point = 0.0;
  double derivative_at_zero = 0.0;
  double derivative_at_point = 0.0;
  double analytic_bias = 0.0;  // derivative_at_zero - E derivative(perturbed)
  double mc_estimate = 0.0;
  double mc_se = 0.0;
  long draws = 0;
};
SigmoidBiasReport counterexample_sigmoid_bias(double point, long draws = 1000000,
                                              std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Derivative check

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_error = 0.0;
  };
  std::vector<Entry> entries;
  double worst = 0.0;
};
/// Finite-difference check of every catalog operator at random points.
GradCheckReport catalog_gradient_check(int points_per_operator, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Step-size sweeps

enum class Regime { kFrequentZeroMean, kFrequentBiasedBackward, kIntermittentForward };

Regime regime_from_string(const std::string& name);
const char* regime_name(Regime regime);
/// Frequent regimes average the whole sample set each iteration; the
/// intermittent regime draws single samples.
GradientMode default_mode(Regime regime);

struct SweepGrid {
  Regime regime = Regime::kFrequentZeroMean;
  std::vector<double> step_sizes = {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4};
  std::vector<double> forward_scales = {0.0};
  std::vector<double> backward_scales = {0.0};
  std::vector<long> intervals = {1};
  int repetitions = 3;
  long burn_in = 3000;
  bool include_baseline = true;
  int workers = 1;
  RunConfig base;
};

struct SweepCellSpec {
  std::string label;  // "standard" for the unperturbed cell
  double forward_scale = 0.0;
  double backward_scale = 0.0;
  long interval = 1;
  PerturbationPlan plan;
};

struct SweepRunResult {
  int cell = 0;
  int step_index = 0;
  int repetition = 0;
  std::uint64_t seed = 0;
  StabilityMetrics metrics;
  bool diverged = false;
  long q_forward = 0, q_backward = 0;
  double final_loss = 0.0;
};

struct SweepCellSummary {
  int cell = 0;
  int step_index = 0;
  double mean_stable_norm = 0.0;         // over non-diverged repetitions
  double mean_stable_iteration = -1.0;   // over repetitions that stabilized
  int stable_not_reached = 0;
  int diverged_count = 0;
};

struct SweepResult {
  SweepGrid grid;
  std::vector<SweepCellSpec> cells;
  std::vector<SweepRunResult> runs;        // cell-major, then step, then repetition
  std::vector<SweepCellSummary> summaries;
  Eigen::VectorXd warm_start;

  const SweepCellSummary& summary(int cell, int step_index) const;
  /// Index of the cell with the given label; -1 when absent.
  int cell_index(const std::string& label) const;
};

/// Cell list the grid expands to, baseline included.
std::vector<SweepCellSpec> expand_cells(const SweepGrid& grid);

/// Shared warm start: deterministic clean descent from zero for `burn_in`
/// iterations at the certified safe step.
Eigen::VectorXd burn_in_weights(const Chain& chain, const Dataset& data, long burn_in);

/*! Run every (cell, step, repetition) combination.
 *
 *  All cells replay the same repetition seeds and start from the same warm
 *  start, so cells differ only through their perturbation plans. Results are
 *  assembled in grid order whatever the worker count.
 */
SweepResult sweep(const Chain& chain, const Dataset& data, const SweepGrid& grid);

void write_sweep_csv(const SweepResult& result, const std::string& dir);

// ---------------------------------------------------------------------------
// Bound verification

struct BoundCheckOptions {
  int weight_points = 10;
  int trials = 1000;
  int corpus_trials = 5;      // per weight point; their states feed the corpus
  double weight_scale = 1.0;
  std::uint64_t seed = 0;
  bool check_rates = true;
  long horizon = 20000;
  double step_size = 0.0;     // 0 picks the largest certified-safe step
  double sampling_noise_std = 0.0;
  long metric_stride = 1;
  double slack = 1.0;
  std::uint64_t config_hash = 0;
};

struct BoundCheckRow {
  std::string quantity;
  int point = -1;  // weight-point index, -1 for run-level rows
  double theoretical = 0.0;
  double empirical = 0.0;
  double margin = 0.0;  // theoretical - empirical
  bool violated = false;
};

struct BoundCheckReport {
  std::vector<BoundCheckRow> rows;
  EstimateReport estimate;
  AdmissibilityReport admissibility;
  bool admissibility_checked = false;
  std::uint64_t config_hash = 0;
  bool any_violation() const;
};

/*! Compare predicted perturbation amplification against measurement.
 *
 *  Probes gradient error moments at random weight points, estimates the
 *  smoothness constants from the visited states, and (optionally) runs the
 *  two descent guarantees against a clean and a perturbed run. An empty
 *  plan is fine: every predicted perturbation term is zero and the
 *  measured errors vanish with it. Throws when the corpus cannot support
 *  the Lipschitz estimates.
 */
BoundCheckReport bound_check(const Chain& chain, const Dataset& data,
                             const PerturbationPlan& plan, const BoundCheckOptions& options);

void write_bound_csv(const BoundCheckReport& report, const std::string& dir);

// ---------------------------------------------------------------------------
// Configuration glue

DatasetSpec dataset_spec_from(const ConfigFile& cfg);
PerturbationPlan plan_from(const ConfigFile& cfg, const Chain& chain);
RunConfig run_config_from(const ConfigFile& cfg);
SweepGrid sweep_grid_from(const ConfigFile& cfg);
BoundCheckOptions bound_options_from(const ConfigFile& cfg);

/// Trace CSV for one finished run: t, grad_norm, loss, ewma, site activity.
void write_trace_csv(const RunTrace& trace, const std::string& dir, const std::string& name);

}  // namespace chainsgd
