#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "chainsgd/chain.hpp"
#include "chainsgd/dataset.hpp"
#include "chainsgd/perturbation.hpp"

namespace chainsgd {

/// How the descent direction is formed each iteration: a single uniformly
/// drawn sample, or the average over the whole sample set (one shared
/// perturbation draw per site covers every sample that iteration).
enum class GradientMode { kStochastic, kFullObjective };

struct RunConfig {
  double step_size = 1e-2;
  long horizon = 1000;
  double momentum = 0.0;              // heavy-ball beta in [0, 1)
  double sampling_noise_std = 0.0;    // per-coordinate std of the additive draw noise
  std::uint64_t seed = 0;
  std::uint64_t replicate = 0;        // perturbation substream index
  double ewma_coefficient = 0.99;     // lambda in (0, 1)
  GradientMode mode = GradientMode::kFullObjective;
  long metric_stride = 1;             // evaluate full metrics every this many iterations
  double divergence_norm = 1e12;      // abort once the weight norm exceeds this
  Eigen::VectorXd initial_weights;    // empty means zeros

  void validate() const;
};

struct RunTrace {
  std::vector<long> metric_iterations;   // iterations where metrics were evaluated
  std::vector<double> grad_norm;         // exact full-objective gradient norm at w_t
  std::vector<double> loss;              // full objective value at w_t
  std::vector<double> ewma;              // smoothed grad_norm over the evaluated points
  std::vector<char> delta_active;        // forward site scheduled at that iteration
  std::vector<char> eps_active;          // backward site scheduled at that iteration
  std::vector<PerturbationEvent> events;
  Eigen::VectorXd final_weights;
  std::vector<Eigen::VectorXd> weight_history;  // w_0 .. w_T when recorded
  bool diverged = false;
  long completed_iterations = 0;
  long q_forward = 0;   // iterations with a nonzero forward perturbation
  long q_backward = 0;  // iterations with a nonzero backward perturbation
};

struct RunOptions {
  bool record_weights = false;
  bool record_events = true;
};

/// Exponential moving average with s_0 = x_0, s_t = c*s_{t-1} + (1-c)*x_t.
/// Accepts c in [0, 1); c = 0 reproduces the input.
std::vector<double> ewma_series(const std::vector<double>& values, double coefficient);

struct StabilityMetrics {
  double stable_gradient_norm = 0.0;      // mean smoothed norm over the trailing half
  std::optional<long> stable_iteration;   // first iteration with smoothed norm below 1.5x that
};

/// Plateau statistics of a finished trace. Diverged traces report the last
/// finite smoothed value and no stable iteration.
StabilityMetrics stability_metrics(const RunTrace& trace);

/// Exact mean loss over the sample set plus the penalty.
double full_loss(const Chain& chain, const Dataset& data, const Eigen::VectorXd& weights);

/// Exact mean sample gradient plus the penalty gradient.
Eigen::VectorXd full_gradient(const Chain& chain, const Dataset& data,
                              const Eigen::VectorXd& weights);

/*! Run perturbed heavy-ball SGD on the chain over the sample set.
 *
 *  Each iteration forms a perturbed gradient estimate (per the plan), adds
 *  the exact penalty gradient and optional Gaussian draw noise, then steps
 *  w_{t+1} = w_t - step*(estimate) + beta*(w_t - w_{t-1}). The recorded
 *  gradient norm is always the exact full-objective one at w_t, never the
 *  perturbed estimate. Non-finite iterates or |w| > 1e12 mark the trace
 *  diverged and truncate it without throwing. Byte-deterministic in the
 *  seed.
 */
RunTrace run(const Chain& chain, const Dataset& data, const PerturbationPlan& plan,
             const RunConfig& config, const RunOptions& options = {});

}  // namespace chainsgd
