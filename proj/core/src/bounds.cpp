#include "chainsgd/bounds.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "chainsgd/rng.hpp"

namespace chainsgd {
namespace {

// sum_{k=0}^{j} r^k
double geometric_partial(double r, int j) {
  double sum = 0.0;
  double term = 1.0;
  for (int k = 0; k <= j; ++k) {
    sum += term;
    term *= r;
  }
  return sum;
}

double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

void check_constants(const SmoothnessConstants& c) {
  if (c.chain_length < 2) throw std::invalid_argument("bounds: chain_length must be >= 2");
}

double moment_or_zero(const std::vector<MomentSummary>& v, std::size_t i,
                      double MomentSummary::*field) {
  return i < v.size() ? v[i].*field : 0.0;
}

}  // namespace

double adjoint_norm_bound(const SmoothnessConstants& c) {
  check_constants(c);
  return std::max(1.0, std::pow(c.jacobian_bound, c.chain_length));
}

BoundCoefficients error_coefficients(const SmoothnessConstants& c) {
  check_constants(c);
  const int n = c.chain_length;
  const double cv = adjoint_norm_bound(c);
  const double g = 3.0 * c.jacobian_bound * c.jacobian_bound;
  const double h = 2.0 * c.op_lipschitz * c.op_lipschitz;

  BoundCoefficients k;
  k.adjoint_bound = cv;
  k.var_forward.resize(n - 1);
  k.var_backward.resize(n - 1);
  for (int i = 1; i <= n - 1; ++i) {
    double sum = 0.0;
    double hpow = 1.0;
    for (int j = i; j <= n - 1; ++j) {
      sum += geometric_partial(g, j) * hpow;
      hpow *= h;
    }
    k.var_forward[i - 1] =
        4.0 * cv * cv * c.jacobian_lipschitz * c.jacobian_lipschitz * sum;
    k.var_backward[i - 1] = geometric_partial(g, i) - 1.0;  // sum_{j=1}^{i} g^j
  }
  return k;
}

BoundCoefficients bias_coefficients(const SmoothnessConstants& c) {
  check_constants(c);
  const int n = c.chain_length;
  const double cv = adjoint_norm_bound(c);
  const double g = 3.0 * c.jacobian_bound * c.jacobian_bound;
  const double q = 4.0 * c.jacobian_bound * c.jacobian_bound;
  const double f4 = 8.0 * std::pow(c.op_lipschitz, 4);

  BoundCoefficients k;
  k.adjoint_bound = cv;
  k.bias_forward_mean.resize(n - 1);
  k.bias_forward_fourth.resize(n - 1);
  k.bias_backward_mean.resize(n - 1);
  k.output_sensitivity.resize(n - 1);

  for (int i = 1; i <= n - 1; ++i) {
    double sum = 0.0;
    double qpow = 1.0;
    for (int j = i; j <= n - 1; ++j) {
      sum += geometric_partial(g, j) * qpow;
      qpow *= q;
    }
    k.bias_forward_mean[i - 1] =
        8.0 * c.mixed_lipschitz * c.mixed_lipschitz * cv * cv * sum;
    k.bias_backward_mean[i - 1] = 2.0 * (geometric_partial(g, i) - 1.0);
  }

  for (int i = 1; i <= n - 1; ++i) {
    double tail = 0.0;
    double qpow = 1.0;
    for (int j = i + 1; j <= n - 1; ++j) {
      tail += geometric_partial(g, j) * qpow;
      qpow *= q;
    }
    k.output_sensitivity[i - 1] =
        8.0 * c.mixed_bound * c.mixed_bound * c.jacobian_lipschitz *
            c.jacobian_lipschitz * cv * cv * tail +
        2.0 * c.mixed_lipschitz * c.mixed_lipschitz * cv * cv * geometric_partial(g, i);
  }

  for (int i = 1; i <= n - 1; ++i) {
    double sum = 0.0;
    double fpow = 1.0;
    for (int j = i; j <= n - 1; ++j) {
      sum += k.output_sensitivity[j - 1] * fpow;
      fpow *= f4;
    }
    k.bias_forward_fourth[i - 1] = 8.0 * sum;
  }
  return k;
}

BoundCoefficients all_coefficients(const SmoothnessConstants& c) {
  BoundCoefficients k = error_coefficients(c);
  BoundCoefficients b = bias_coefficients(c);
  k.bias_forward_mean = std::move(b.bias_forward_mean);
  k.bias_forward_fourth = std::move(b.bias_forward_fourth);
  k.bias_backward_mean = std::move(b.bias_backward_mean);
  k.output_sensitivity = std::move(b.output_sensitivity);
  return k;
}

std::vector<PerLayerMoments> plan_moment_schedule(const Chain& chain,
                                                  const PerturbationPlan& plan, long horizon) {
  if (horizon < 1) throw std::invalid_argument("plan_moment_schedule: horizon must be >= 1");
  const int n = chain.size();

  std::vector<MomentSummary> fwd_active(n - 1), bwd_active(n - 1);
  for (int i = 1; i <= n - 1; ++i) {
    const int dim = chain.op(i).output_dim();
    if (const PlanEntry* e = plan.entry(i, PassKind::kForward))
      fwd_active[i - 1] = analytic_moments(e->dist, dim);
    if (const PlanEntry* e = plan.entry(i + 1, PassKind::kBackward))
      bwd_active[i - 1] = analytic_moments(e->dist, dim);
  }

  std::vector<PerLayerMoments> out(static_cast<std::size_t>(horizon));
  for (long t = 0; t < horizon; ++t) {
    PerLayerMoments& m = out[static_cast<std::size_t>(t)];
    m.forward.assign(n - 1, MomentSummary{});
    m.backward.assign(n - 1, MomentSummary{});
    for (int i = 1; i <= n - 1; ++i) {
      const PlanEntry* ef = plan.entry(i, PassKind::kForward);
      if (ef && ef->schedule.active_at(t)) m.forward[i - 1] = fwd_active[i - 1];
      const PlanEntry* eb = plan.entry(i + 1, PassKind::kBackward);
      if (eb && eb->schedule.active_at(t)) m.backward[i - 1] = bwd_active[i - 1];
    }
  }
  return out;
}

double variance_bound(const BoundCoefficients& k, const PerLayerMoments& m) {
  double total = 0.0;
  for (std::size_t i = 0; i < k.var_forward.size(); ++i)
    total += k.var_forward[i] * moment_or_zero(m.forward, i, &MomentSummary::second_moment);
  for (std::size_t i = 0; i < k.var_backward.size(); ++i)
    total += k.var_backward[i] * moment_or_zero(m.backward, i, &MomentSummary::second_moment);
  return total;
}

double bias_bound(const BoundCoefficients& k, const PerLayerMoments& m) {
  double total = 0.0;
  for (std::size_t i = 0; i < k.bias_forward_mean.size(); ++i)
    total += k.bias_forward_mean[i] * moment_or_zero(m.forward, i, &MomentSummary::mean_norm_sq);
  for (std::size_t i = 0; i < k.bias_forward_fourth.size(); ++i)
    total +=
        k.bias_forward_fourth[i] * moment_or_zero(m.forward, i, &MomentSummary::fourth_moment);
  for (std::size_t i = 0; i < k.bias_backward_mean.size(); ++i)
    total +=
        k.bias_backward_mean[i] * moment_or_zero(m.backward, i, &MomentSummary::mean_norm_sq);
  return total;
}

namespace {

const PerLayerMoments& moments_at(const std::vector<PerLayerMoments>& moments, long t) {
  if (moments.size() == 1) return moments.front();
  return moments.at(static_cast<std::size_t>(t));
}

void check_rate_inputs(const std::vector<PerLayerMoments>& moments, double gamma, long horizon) {
  if (gamma <= 0.0) throw std::invalid_argument("rate bound: step size must be positive");
  if (horizon < 1) throw std::invalid_argument("rate bound: horizon must be >= 1");
  if (moments.size() != 1 && moments.size() != static_cast<std::size_t>(horizon))
    throw std::invalid_argument("rate bound: need one moment entry or one per iteration");
}

}  // namespace

double nonconvex_rate_bound(const SmoothnessConstants& c, const BoundCoefficients& k,
                            const std::vector<PerLayerMoments>& moments, double gamma,
                            long horizon, double initial_gap) {
  check_constants(c);
  check_rate_inputs(moments, gamma, horizon);
  const double lip = c.loss_grad_lipschitz;
  if (gamma > 1.0 / (3.0 * lip))
    throw std::invalid_argument("nonconvex_rate_bound: step size exceeds 1/(3 L)");

  double var_sum = 0.0;
  double bias_sum = 0.0;
  for (long t = 0; t < horizon; ++t) {
    const PerLayerMoments& m = moments_at(moments, t);
    var_sum += variance_bound(k, m);
    bias_sum += bias_bound(k, m);
  }
  const double tt = static_cast<double>(horizon);
  return 6.0 * initial_gap / (gamma * tt) + 6.0 * lip * gamma * c.noise_bound * c.noise_bound +
         6.0 * lip * gamma * var_sum / tt + 3.0 * bias_sum / tt;
}

double pl_rate_bound(const SmoothnessConstants& c, const BoundCoefficients& k,
                     const std::vector<PerLayerMoments>& moments, double gamma, long horizon,
                     double initial_gap) {
  check_constants(c);
  check_rate_inputs(moments, gamma, horizon);
  const double lip = c.loss_grad_lipschitz;
  if (gamma > 1.0 / (3.0 * lip))
    throw std::invalid_argument("pl_rate_bound: step size exceeds 1/(3 L)");
  if (!c.pl_constant || *c.pl_constant <= 0.0)
    throw std::invalid_argument("pl_rate_bound: requires a positive pl_constant");
  const double mu = *c.pl_constant;
  const double rho = 1.0 - mu * gamma / 3.0;

  double weighted = 0.0;
  for (long t = 0; t < horizon; ++t) {
    const PerLayerMoments& m = moments_at(moments, t);
    const double decay = std::pow(rho, static_cast<double>(horizon - t));
    weighted += decay * (lip * gamma * gamma * variance_bound(k, m) +
                         0.5 * gamma * bias_bound(k, m));
  }
  return std::pow(rho, static_cast<double>(horizon)) * initial_gap +
         3.0 * lip * gamma * c.noise_bound * c.noise_bound / mu + weighted;
}

namespace {

ChannelVerdict verdict(double count, double budget) {
  ChannelVerdict v;
  v.count = count;
  v.budget = budget;
  v.ratio = budget > 0.0 ? count / budget : (count > 0.0 ? HUGE_VAL : 0.0);
  v.admissible = count <= budget;
  return v;
}

}  // namespace

AdmissibilityReport admissibility(Assumption assumption, bool zero_mean, double forward_count,
                                  double backward_count, long horizon, double slack) {
  if (horizon < 1) throw std::invalid_argument("admissibility: horizon must be >= 1");
  const double tt = static_cast<double>(horizon);
  const double root = std::sqrt(tt);

  double fwd_budget = assumption == Assumption::kNonconvex ? slack * root : slack;
  double bwd_budget = zero_mean ? slack * tt
                                : (assumption == Assumption::kNonconvex ? slack * root : slack);

  AdmissibilityReport report;
  report.forward = verdict(forward_count, fwd_budget);
  report.backward = verdict(backward_count, bwd_budget);
  return report;
}

MagnitudeThresholds frequent_magnitude_thresholds(Assumption assumption, long horizon,
                                                  double slack) {
  if (horizon < 2) throw std::invalid_argument("magnitude thresholds: horizon must be >= 2");
  const double tt = static_cast<double>(horizon);
  MagnitudeThresholds th;
  if (assumption == Assumption::kNonconvex) {
    th.forward_rms = slack * std::pow(tt, -0.125);
    th.forward_mean = slack * std::pow(tt, -0.25);
    th.backward_rms = slack;
    th.backward_mean = slack * std::pow(tt, -0.25);
  } else {
    const double lg = std::log(tt);
    th.forward_rms = slack * std::pow(tt, -0.25) * std::pow(lg, 0.25);
    th.forward_mean = slack * std::pow(tt, -0.5) * std::sqrt(lg);
    th.backward_rms = slack;
    th.backward_mean = slack * std::pow(tt, -0.5) * std::sqrt(lg);
  }
  return th;
}

void StateCorpus::init(const Chain& chain) {
  chain_length = chain.size();
  points.assign(static_cast<std::size_t>(chain_length), {});
  pairs.assign(static_cast<std::size_t>(chain_length), {});
  gradient_samples.clear();
  adjoint_norms.clear();
}

void StateCorpus::absorb(const Chain& chain, const Eigen::VectorXd& stacked_weights,
                         const PassState& state) {
  if (chain_length != chain.size()) init(chain);
  for (int i = 1; i <= chain_length; ++i) {
    points[static_cast<std::size_t>(i - 1)].push_back(
        {state.outputs.at(static_cast<std::size_t>(i - 1)),
         Eigen::VectorXd(chain.weights_of(stacked_weights, i))});
  }
  for (const Eigen::VectorXd& v : state.adjoints)
    if (v.size() > 0) adjoint_norms.push_back(v.norm());
}

void StateCorpus::absorb_pair(const Chain& chain, const Eigen::VectorXd& stacked_weights,
                              const PassState& clean, const PassState& perturbed) {
  absorb(chain, stacked_weights, clean);
  absorb(chain, stacked_weights, perturbed);
  for (int i = 1; i <= chain_length; ++i) {
    pairs[static_cast<std::size_t>(i - 1)].push_back(
        {clean.outputs.at(static_cast<std::size_t>(i - 1)),
         perturbed.outputs.at(static_cast<std::size_t>(i - 1)),
         Eigen::VectorXd(chain.weights_of(stacked_weights, i))});
  }
}

namespace {

struct PairView {
  const Eigen::VectorXd* a;
  const Eigen::VectorXd* b;
  const Eigen::VectorXd* w;
};

// Matched pairs first, then same-weights point pairs sampled up to the cap.
std::vector<PairView> collect_pairs(const std::vector<StateCorpus::LayerPoint>& pts,
                                    const std::vector<StateCorpus::LayerPair>& matched,
                                    std::size_t cap, SplitMix64& rng) {
  std::vector<PairView> out;
  out.reserve(matched.size());
  for (const auto& p : matched) out.push_back({&p.input_a, &p.input_b, &p.weights});
  if (pts.size() >= 2 && out.size() < cap) {
    const std::size_t budget = cap - out.size();
    for (std::size_t k = 0; k < budget; ++k) {
      std::size_t i = static_cast<std::size_t>(rng() % pts.size());
      std::size_t j = static_cast<std::size_t>(rng() % pts.size());
      if (i == j) continue;
      if ((pts[i].weights - pts[j].weights).norm() > 0.0) continue;
      out.push_back({&pts[i].input, &pts[j].input, &pts[i].weights});
    }
  }
  return out;
}

}  // namespace

EstimateReport estimate_constants(const Chain& chain, const StateCorpus& corpus,
                                  const EstimationOptions& options) {
  if (corpus.chain_length != chain.size())
    throw std::invalid_argument("estimate_constants: corpus does not match the chain");

  EstimateReport report;
  SmoothnessConstants& c = report.constants;
  c.chain_length = chain.size();
  SplitMix64 rng(derive_stream({options.seed, 0x636f7270757351ULL}));

  for (int i = 1; i <= chain.size(); ++i) {
    const Operator& op = chain.op(i);
    const auto& pts = corpus.points[static_cast<std::size_t>(i - 1)];
    report.point_count += pts.size();
    for (const auto& p : pts) {
      c.jacobian_bound = std::max(c.jacobian_bound, spectral_norm(op.jac_input(p.input, p.weights)));
      c.jacobian_bound =
          std::max(c.jacobian_bound, spectral_norm(op.jac_weight(p.input, p.weights)));
      const Tensor3 mixed = op.has_mixed() ? op.jac_mixed(p.input, p.weights)
                                           : fd_mixed_jacobian(op, p.input, p.weights,
                                                               options.fd_step);
      c.mixed_bound = std::max(c.mixed_bound, mixed.operator_norm());
    }

    const auto views =
        collect_pairs(pts, corpus.pairs[static_cast<std::size_t>(i - 1)],
                      options.max_pairs_per_layer, rng);
    for (const PairView& v : views) {
      const double dist = (*v.a - *v.b).norm();
      if (dist < 1e-12) continue;
      ++report.pair_count;
      c.op_lipschitz = std::max(
          c.op_lipschitz, (op.forward(*v.a, *v.w) - op.forward(*v.b, *v.w)).norm() / dist);
      const double jac_gap =
          std::max((op.jac_input(*v.a, *v.w) - op.jac_input(*v.b, *v.w)).norm(),
                   (op.jac_weight(*v.a, *v.w) - op.jac_weight(*v.b, *v.w)).norm());
      c.jacobian_lipschitz = std::max(c.jacobian_lipschitz, jac_gap / dist);
      const Tensor3 ma = op.has_mixed() ? op.jac_mixed(*v.a, *v.w)
                                        : fd_mixed_jacobian(op, *v.a, *v.w, options.fd_step);
      const Tensor3 mb = op.has_mixed() ? op.jac_mixed(*v.b, *v.w)
                                        : fd_mixed_jacobian(op, *v.b, *v.w, options.fd_step);
      double gap = 0.0;
      const auto& da = ma.data();
      const auto& db = mb.data();
      for (std::size_t s = 0; s < da.size(); ++s) gap += (da[s] - db[s]) * (da[s] - db[s]);
      c.mixed_lipschitz = std::max(c.mixed_lipschitz, std::sqrt(gap) / dist);
    }
  }

  for (std::size_t i = 0; i < corpus.gradient_samples.size(); ++i) {
    for (std::size_t j = i + 1; j < corpus.gradient_samples.size(); ++j) {
      const double dw =
          (corpus.gradient_samples[i].first - corpus.gradient_samples[j].first).norm();
      if (dw < 1e-12) continue;
      ++report.gradient_pair_count;
      c.loss_grad_lipschitz = std::max(
          c.loss_grad_lipschitz,
          (corpus.gradient_samples[i].second - corpus.gradient_samples[j].second).norm() / dw);
    }
  }
  report.lipschitz_available = report.pair_count > 0;
  return report;
}

}  // namespace chainsgd
