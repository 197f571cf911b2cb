#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "chainsgd/chain.hpp"
#include "chainsgd/passes.hpp"
#include "chainsgd/perturbation.hpp"

namespace chainsgd {

/*! Regularity constants of a chain over a region of interest.
 *
 *  Uniform bounds: jacobian_bound caps the spectral norm of every stage
 *  Jacobian (input and weight blocks), mixed_bound caps the operator norm of
 *  every mixed derivative tensor. Lipschitz moduli are taken along the stage
 *  input: op_lipschitz for the stage map, jacobian_lipschitz for its
 *  Jacobians, mixed_lipschitz for the mixed derivative.
 *  loss_grad_lipschitz is the smoothness modulus of the full objective,
 *  noise_bound the second-moment bound on the sampling noise, and
 *  pl_constant the gradient-dominance constant when one holds.
 */
struct SmoothnessConstants {
  int chain_length = 0;
  double jacobian_bound = 0.0;
  double mixed_bound = 0.0;
  double op_lipschitz = 0.0;
  double jacobian_lipschitz = 0.0;
  double mixed_lipschitz = 0.0;
  double loss_grad_lipschitz = 0.0;
  double noise_bound = 0.0;  // sqrt(E ||xi||^2)
  std::optional<double> pl_constant;
};

/// Worst-case adjoint norm along a clean backward pass:
/// max(1, jacobian_bound^N).
double adjoint_norm_bound(const SmoothnessConstants& c);

/*! Amplification coefficients multiplying the perturbation moments.
 *
 *  Arrays are indexed by stage: var_forward[i-1] and the three bias_forward
 *  arrays weight the stage-i output perturbation for i = 1..N-1;
 *  var_backward[i-1] and bias_backward_mean[i-1] weight the adjoint
 *  perturbation injected at stage i+1. output_sensitivity[i-1] is the
 *  squared sensitivity of the final adjoint chain to the stage-i output,
 *  an intermediate quantity reused by the fourth-moment coefficients.
 */
struct BoundCoefficients {
  double adjoint_bound = 1.0;
  std::vector<double> var_forward;           // x E ||delta_i||^2
  std::vector<double> var_backward;          // x E ||eps_{i+1}||^2
  std::vector<double> bias_forward_mean;     // x ||E delta_i||^2
  std::vector<double> bias_forward_fourth;   // x E ||delta_i||^4
  std::vector<double> bias_backward_mean;    // x ||E eps_{i+1}||^2
  std::vector<double> output_sensitivity;    // squared, stage i = 1..N-1
};

/// Second-moment (variance) amplification coefficients.
BoundCoefficients error_coefficients(const SmoothnessConstants& c);
/// First-moment (bias) amplification coefficients, including the
/// fourth-moment curvature terms.
BoundCoefficients bias_coefficients(const SmoothnessConstants& c);
/// Both families in one struct.
BoundCoefficients all_coefficients(const SmoothnessConstants& c);

/// Perturbation moments for one iteration. forward[i-1] describes delta_i
/// (i = 1..N-1), backward[i-1] describes eps_{i+1}.
struct PerLayerMoments {
  std::vector<MomentSummary> forward;
  std::vector<MomentSummary> backward;
};

/// Moments of the plan at each iteration 0..horizon-1 (zero when a site's
/// schedule is silent). Compressor attachments contribute nothing here; their
/// moments are state-dependent and must be measured from event logs.
std::vector<PerLayerMoments> plan_moment_schedule(const Chain& chain,
                                                  const PerturbationPlan& plan, long horizon);

/// Upper bound on E ||perturbed gradient - clean gradient||^2.
double variance_bound(const BoundCoefficients& k, const PerLayerMoments& m);
/// Upper bound on ||E[perturbed gradient - clean gradient]||^2.
double bias_bound(const BoundCoefficients& k, const PerLayerMoments& m);

/// Averaged-squared-gradient guarantee for step sizes
/// gamma <= 1 / (3 loss_grad_lipschitz). `moments` has one entry per
/// iteration, or a single entry reused for all of them.
double nonconvex_rate_bound(const SmoothnessConstants& c, const BoundCoefficients& k,
                            const std::vector<PerLayerMoments>& moments, double gamma,
                            long horizon, double initial_gap);

/// Final-gap guarantee under gradient dominance; requires pl_constant.
double pl_rate_bound(const SmoothnessConstants& c, const BoundCoefficients& k,
                     const std::vector<PerLayerMoments>& moments, double gamma, long horizon,
                     double initial_gap);

enum class Assumption { kNonconvex, kPolyakLojasiewicz };

/// Occurrence budgets that keep the rate terms from dominating:
/// forward count vs sqrt(T) (nonconvex) or O(1) (PL); backward count vs T
/// when zero-mean, else the forward budget.
struct ChannelVerdict {
  bool admissible = true;
  double count = 0.0;
  double budget = 0.0;
  double ratio = 0.0;  // count / budget
};
struct AdmissibilityReport {
  ChannelVerdict forward;
  ChannelVerdict backward;
  bool admissible() const { return forward.admissible && backward.admissible; }
};
AdmissibilityReport admissibility(Assumption assumption, bool zero_mean, double forward_count,
                                  double backward_count, long horizon, double slack = 1.0);

/// Magnitude ceilings for every-iteration perturbations that preserve the
/// clean convergence rate.
struct MagnitudeThresholds {
  double forward_rms = 0.0;
  double forward_mean = 0.0;
  double backward_rms = 0.0;
  double backward_mean = 0.0;
};
MagnitudeThresholds frequent_magnitude_thresholds(Assumption assumption, long horizon,
                                                  double slack = 1.0);

/*! Visited-region evidence for estimating SmoothnessConstants.
 *
 *  `absorb` records every stage's (input, weights) point from a pass;
 *  `absorb_pair` additionally records matched same-weights input pairs from a
 *  clean/perturbed pass couple, which are exactly the displacements the
 *  Lipschitz moduli must cover. gradient_samples hold (w, full gradient)
 *  pairs for the objective smoothness modulus.
 */
struct StateCorpus {
  struct LayerPoint {
    Eigen::VectorXd input;
    Eigen::VectorXd weights;
  };
  struct LayerPair {
    Eigen::VectorXd input_a;
    Eigen::VectorXd input_b;
    Eigen::VectorXd weights;
  };

  int chain_length = 0;
  std::vector<std::vector<LayerPoint>> points;
  std::vector<std::vector<LayerPair>> pairs;
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> gradient_samples;
  std::vector<double> adjoint_norms;

  void init(const Chain& chain);
  void absorb(const Chain& chain, const Eigen::VectorXd& stacked_weights,
              const PassState& state);
  void absorb_pair(const Chain& chain, const Eigen::VectorXd& stacked_weights,
                   const PassState& clean, const PassState& perturbed);
};

struct EstimationOptions {
  std::size_t max_pairs_per_layer = 100000;
  std::uint64_t seed = 0;
  double fd_step = 1e-5;
};

/// Local estimates with the evidence volume they rest on. When the corpus
/// offers no usable pair at some stage, the Lipschitz fields are zero and
/// lipschitz_available is false.
struct EstimateReport {
  SmoothnessConstants constants;
  std::size_t point_count = 0;
  std::size_t pair_count = 0;
  std::size_t gradient_pair_count = 0;
  bool lipschitz_available = false;
};

/// Max observed Jacobian norms and pairwise difference quotients over the
/// corpus. Stages without an analytic mixed derivative fall back to finite
/// differences. noise_bound and pl_constant are left for the caller.
EstimateReport estimate_constants(const Chain& chain, const StateCorpus& corpus,
                                  const EstimationOptions& options = {});

}  // namespace chainsgd
