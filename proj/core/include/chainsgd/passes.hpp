#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "chainsgd/chain.hpp"
#include "chainsgd/perturbation.hpp"

namespace chainsgd {

/*! Buffers for one evaluation of a chain on one sample.
 *
 *  outputs[i] holds y_i for i = 0..N (y_0 is the sample), adjoints[i-1]
 *  holds v_i for i = 1..N, weight_grads[i-1] holds u_i. Perturbed passes fill
 *  the same buffers with the perturbed quantities and log what they injected.
 *  Buffers are sized once per chain and reused across calls.
 */
struct PassState {
  std::vector<Eigen::VectorXd> outputs;
  std::vector<Eigen::VectorXd> adjoints;
  std::vector<Eigen::VectorXd> weight_grads;
  std::vector<PerturbationEvent> events;
  bool diverged = false;

  void resize_for(const Chain& chain);
};

/// Perturbation values fixed for one iteration, shared by every sample pass
/// at that iteration. Index 0 is unused; forward[i] perturbs y_i, backward[i]
/// perturbs the adjoint produced by stage i.
struct IterationDraws {
  std::vector<std::optional<Eigen::VectorXd>> forward;
  std::vector<std::optional<Eigen::VectorXd>> backward;
  const PerturbationPlan* plan = nullptr;
  long t = 0;
};

IterationDraws draw_iteration_perturbations(const Chain& chain, const PerturbationPlan& plan,
                                            long t, std::uint64_t master_seed,
                                            std::uint64_t replicate = 0);

/// y_i = f_i(y_{i-1}, w_i) for all stages. Returns the loss y_N(0).
double forward_clean(const Chain& chain, const Eigen::VectorXd& sample,
                     const Eigen::VectorXd& weights, PassState& state);

/// v_N = 1; v_{i-1} = jac_input_i(y_{i-1}, w_i)^T v_i. Needs a prior forward.
void backward_clean(const Chain& chain, const Eigen::VectorXd& weights, PassState& state);

/// u_i = jac_weight_i(y_{i-1}, w_i)^T v_i for all stages, evaluated on
/// whatever (possibly perturbed) outputs/adjoints the state holds.
void weight_gradients(const Chain& chain, const Eigen::VectorXd& weights, PassState& state);

/// Forward pass with injections: each stage output is computed from the
/// previous perturbed output, then shifted by the drawn value and passed
/// through the attached compressor. The event log records the total implied
/// deviation from the chain-rule value at each active site.
double forward_perturbed(const Chain& chain, const Eigen::VectorXd& sample,
                         const Eigen::VectorXd& weights, const IterationDraws& draws,
                         PassState& state);

/// Backward pass with injections, mirroring forward_perturbed. The weight
/// gradients themselves receive no extra noise; call weight_gradients after.
void backward_perturbed(const Chain& chain, const Eigen::VectorXd& weights,
                        const IterationDraws& draws, PassState& state);

/// Stacked chain gradient (excludes the regularizer) from the state's
/// per-stage weight gradients.
void stack_gradient(const Chain& chain, const PassState& state, Eigen::VectorXd& out);

/// Chain loss for one sample (no regularizer).
double sample_loss(const Chain& chain, const Eigen::VectorXd& sample,
                   const Eigen::VectorXd& weights);

/// Clean stacked chain gradient for one sample (no regularizer).
Eigen::VectorXd sample_gradient(const Chain& chain, const Eigen::VectorXd& sample,
                                const Eigen::VectorXd& weights);

/// Perturbed stacked chain gradient for one sample at iteration t.
Eigen::VectorXd sample_gradient_perturbed(const Chain& chain, const Eigen::VectorXd& sample,
                                          const Eigen::VectorXd& weights,
                                          const PerturbationPlan& plan, long t,
                                          std::uint64_t master_seed);

/// Relative disagreement between analytic Jacobians and central finite
/// differences of the forward map, per derivative block. The step for
/// coordinate c is step_scale * (1 + |c|). Errors are Frobenius-norm
/// relative with a unit floor in the denominator.
struct JacobianReport {
  double input_error = 0.0;
  double weight_error = 0.0;
  std::optional<double> mixed_error;  // absent when the stage has no analytic mixed block
  double max_error() const;
};

JacobianReport check_jacobians(const Operator& op, const Eigen::VectorXd& input,
                               const Eigen::VectorXd& weights, double step_scale = 1e-5);

/// Mixed derivative by central differences of jac_weight along the input.
Tensor3 fd_mixed_jacobian(const Operator& op, const Eigen::VectorXd& input,
                          const Eigen::VectorXd& weights, double step_scale = 1e-5);

/// Relative error of the stacked chain gradient against central finite
/// differences of the chain loss (regularizer excluded).
double check_chain_gradient(const Chain& chain, const Eigen::VectorXd& sample,
                            const Eigen::VectorXd& weights, double step_scale = 1e-5);

}  // namespace chainsgd
