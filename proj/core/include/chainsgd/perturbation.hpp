#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "chainsgd/rng.hpp"

namespace chainsgd {

enum class PassKind { kForward, kBackward };

/*! Additive noise law for one injection site.
 *
 *  The uniform families spread a total energy budget controlled by `scale`
 *  across coordinates: each coordinate of a `dim`-dimensional draw is
 *  U(-c, c) (zero-mean) or U(0, c) (shifted) with half-width / width
 *  c = scale / sqrt(dim), so E||draw||^2 = scale^2 / 3 regardless of dim.
 */
struct Distribution {
  enum class Kind { kNone, kZeroMeanUniform, kShiftedUniform, kConstant, kGaussian };

  Kind kind = Kind::kNone;
  double scale = 0.0;        // uniform families
  Eigen::VectorXd constant;  // kConstant
  Eigen::VectorXd mean;      // kGaussian
  double stddev = 0.0;       // kGaussian, per coordinate

  static Distribution None() { return {}; }
  static Distribution ZeroMeanUniform(double scale);
  static Distribution ShiftedUniform(double scale);
  static Distribution Constant(Eigen::VectorXd value);
  static Distribution Gaussian(Eigen::VectorXd mean, double stddev);

  bool zero_mean() const;
};

/// When a site fires. Iterations count from 0.
struct Schedule {
  enum class Kind { kEveryIteration, kPeriodic, kOneShot, kNever };

  Kind kind = Kind::kEveryIteration;
  long interval = 1;  // kPeriodic
  long phase = 0;     // kPeriodic, in [0, interval)
  long shot = 0;      // kOneShot

  static Schedule EveryIteration() { return {}; }
  static Schedule Periodic(long interval, long phase = 0);
  static Schedule OneShot(long t) { return {Kind::kOneShot, 1, 0, t}; }
  static Schedule Never() { return {Kind::kNever, 1, 0, 0}; }

  bool active_at(long t) const;
};

/// Lossy map applied to a pass value after the chain-rule computation; the
/// difference it introduces is logged as an implied perturbation.
struct Compressor {
  enum class Kind { kNone, kTopK };
  Kind kind = Kind::kNone;
  int k = 1;

  static Compressor None() { return {}; }
  static Compressor TopK(int k) { return {Kind::kTopK, k}; }
};

/// Keep the k largest-magnitude coordinates, zero the rest. Ties break toward
/// the lowest index. k >= dim returns the input unchanged.
Eigen::VectorXd top_k_compress(const Eigen::VectorXd& v, int k);

struct PlanEntry {
  Distribution dist;
  Schedule schedule;
};

/*! Where, when, and how noise enters a run.
 *
 *  Forward entries are keyed by layer i in 1..N and perturb the stage output
 *  y_i; backward entries are keyed by i in 2..N and perturb the adjoint
 *  produced by stage i (the one feeding stage i-1). Compressors attach to the
 *  same sites and apply after the additive draw.
 */
struct PerturbationPlan {
  std::map<int, PlanEntry> forward;
  std::map<int, PlanEntry> backward;
  std::map<int, Compressor> forward_compressor;
  std::map<int, Compressor> backward_compressor;

  bool empty() const {
    return forward.empty() && backward.empty() && forward_compressor.empty() &&
           backward_compressor.empty();
  }
  const PlanEntry* entry(int layer, PassKind pass) const;
  const Compressor* compressor(int layer, PassKind pass) const;
};

/// Draw the additive perturbation for one site at iteration t. Deterministic
/// in (master_seed, t, layer, pass, replicate): every site owns an
/// independent substream. Returns nullopt when the site is silent at t.
std::optional<Eigen::VectorXd> sample_perturbation(const PerturbationPlan& plan, int layer,
                                                   PassKind pass, long t, int dim,
                                                   std::uint64_t master_seed,
                                                   std::uint64_t replicate = 0);

/// Draw from a bare distribution using the provided stream.
Eigen::VectorXd sample_distribution(const Distribution& dist, int dim, SplitMix64& rng);

/// Norm moments of a perturbation law in `dim` dimensions.
struct MomentSummary {
  double second_moment = 0.0;   // E ||x||^2
  double fourth_moment = 0.0;   // E ||x||^4
  double mean_norm_sq = 0.0;    // ||E x||^2
};

/// Closed-form moments for every supported distribution kind.
MomentSummary analytic_moments(const Distribution& dist, int dim);

/// Monte Carlo estimate with standard errors; fallback for laws without a
/// closed form and cross-check for those with one.
struct MomentEstimate {
  MomentSummary moments;
  double second_se = 0.0;
  double fourth_se = 0.0;
};
MomentEstimate monte_carlo_moments(const Distribution& dist, int dim, int draws,
                                   std::uint64_t seed);

/// One realized injection during a run or a pass.
struct PerturbationEvent {
  long t = 0;
  int layer = 0;
  PassKind pass = PassKind::kForward;
  Eigen::VectorXd value;
};

/// Sample moments of the logged events for one site; used for
/// compressor-induced perturbations, which have no analytic law.
MomentSummary moments_from_events(const std::vector<PerturbationEvent>& events, int layer,
                                  PassKind pass);

/// Number of iterations in [0, horizon) at which any forward (resp. backward)
/// event with a nonzero value fired.
struct EventCounts {
  long forward = 0;
  long backward = 0;
};
EventCounts count_event_iterations(const std::vector<PerturbationEvent>& events);

}  // namespace chainsgd
