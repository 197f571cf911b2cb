#include "chainsgd/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "chainsgd/passes.hpp"
#include "chainsgd/rng.hpp"

namespace chainsgd {

namespace {

constexpr std::uint64_t kNoiseTag = 0x6e6f697365ULL;
constexpr std::uint64_t kPickTag = 0x7069636bULL;

bool plan_has_compressor(const Chain& chain, const PerturbationPlan& plan) {
  for (int i = 1; i <= chain.size(); ++i) {
    if (plan.compressor(i, PassKind::kForward) != nullptr) return true;
    if (plan.compressor(i, PassKind::kBackward) != nullptr) return true;
  }
  return false;
}

void accumulate_clean(const Chain& chain, const std::vector<Eigen::VectorXd>& samples,
                      const Eigen::VectorXd& w, PassState& state, Eigen::VectorXd& buf,
                      double& loss_out, Eigen::VectorXd& grad_out) {
  loss_out = 0.0;
  grad_out.setZero();
  for (const auto& sample : samples) {
    loss_out += forward_clean(chain, sample, w, state);
    backward_clean(chain, w, state);
    weight_gradients(chain, w, state);
    stack_gradient(chain, state, buf);
    grad_out += buf;
  }
  const double m = static_cast<double>(samples.size());
  loss_out = loss_out / m + chain.regularizer().value(w);
  grad_out /= m;
  grad_out += chain.regularizer().gradient(w);
}

}  // namespace

void RunConfig::validate() const {
  if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum in [0,1)");
  if (!(sampling_noise_std >= 0.0)) throw std::invalid_argument("sampling_noise_std >= 0");
  if (!(ewma_coefficient > 0.0 && ewma_coefficient < 1.0)) {
    throw std::invalid_argument("ewma_coefficient in (0,1)");
  }
  if (metric_stride < 1) throw std::invalid_argument("metric_stride must be at least 1");
  if (!(divergence_norm > 0.0)) throw std::invalid_argument("divergence_norm must be positive");
}

std::vector<double> ewma_series(const std::vector<double>& values, double coefficient) {
  if (!(coefficient >= 0.0 && coefficient < 1.0)) {
    throw std::invalid_argument("ewma coefficient in [0,1)");
  }
  std::vector<double> out(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    out[k] = (k == 0) ? values[0] : coefficient * out[k - 1] + (1.0 - coefficient) * values[k];
  }
  return out;
}

StabilityMetrics stability_metrics(const RunTrace& trace) {
  StabilityMetrics m;
  if (trace.ewma.empty()) return m;
  if (trace.diverged) {
    for (auto it = trace.ewma.rbegin(); it != trace.ewma.rend(); ++it) {
      if (std::isfinite(*it)) {
        m.stable_gradient_norm = *it;
        break;
      }
    }
    return m;
  }
  const std::size_t k = trace.ewma.size();
  const std::size_t window = std::max<std::size_t>(1, k / 2);
  double sum = 0.0;
  for (std::size_t i = k - window; i < k; ++i) sum += trace.ewma[i];
  m.stable_gradient_norm = sum / static_cast<double>(window);
  for (std::size_t i = 0; i < k; ++i) {
    if (trace.ewma[i] <= 1.5 * m.stable_gradient_norm) {
      m.stable_iteration = trace.metric_iterations[i];
      break;
    }
  }
  return m;
}

double full_loss(const Chain& chain, const Dataset& data, const Eigen::VectorXd& weights) {
  double acc = 0.0;
  for (long l = 0; l < data.size(); ++l) {
    acc += sample_loss(chain, data.sample_vector(l), weights);
  }
  return acc / static_cast<double>(data.size()) + chain.regularizer().value(weights);
}

Eigen::VectorXd full_gradient(const Chain& chain, const Dataset& data,
                              const Eigen::VectorXd& weights) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(chain.weight_dim());
  for (long l = 0; l < data.size(); ++l) {
    acc += sample_gradient(chain, data.sample_vector(l), weights);
  }
  acc /= static_cast<double>(data.size());
  acc += chain.regularizer().gradient(weights);
  return acc;
}

RunTrace run(const Chain& chain, const Dataset& data, const PerturbationPlan& plan,
             const RunConfig& config, const RunOptions& options) {
  config.validate();
  if (data.size() < 1) throw std::invalid_argument("run: empty sample set");
  if (data.feature_dim() + 1 != chain.input_dim()) {
    throw std::invalid_argument("run: sample dimension does not match chain input");
  }

  const int wd = chain.weight_dim();
  Eigen::VectorXd w;
  if (config.initial_weights.size() == 0) {
    w = Eigen::VectorXd::Zero(wd);
  } else if (config.initial_weights.size() == wd) {
    w = config.initial_weights;
  } else {
    throw std::invalid_argument("run: initial weight size mismatch");
  }

  std::vector<Eigen::VectorXd> samples;
  samples.reserve(static_cast<std::size_t>(data.size()));
  for (long l = 0; l < data.size(); ++l) samples.push_back(data.sample_vector(l));

  const bool per_sample_events = plan_has_compressor(chain, plan);
  const long m = data.size();

  RunTrace trace;
  const long expected_metrics = (config.horizon + config.metric_stride - 1) / config.metric_stride;
  trace.metric_iterations.reserve(expected_metrics);
  trace.grad_norm.reserve(expected_metrics);
  trace.loss.reserve(expected_metrics);
  trace.delta_active.reserve(expected_metrics);
  trace.eps_active.reserve(expected_metrics);

  PassState state;
  Eigen::VectorXd buf(wd), estimate(wd), metric_grad(wd), prev = w, next(wd);
  double metric_loss = 0.0;

  for (long t = 0; t < config.horizon; ++t) {
    const IterationDraws draws =
        draw_iteration_perturbations(chain, plan, t, config.seed, config.replicate);
    bool fwd_scheduled = false, bwd_scheduled = false;
    for (int i = 1; i <= chain.size(); ++i) {
      fwd_scheduled = fwd_scheduled || draws.forward[i].has_value() ||
                      plan.compressor(i, PassKind::kForward) != nullptr;
      bwd_scheduled = bwd_scheduled || draws.backward[i].has_value() ||
                      plan.compressor(i, PassKind::kBackward) != nullptr;
    }

    if (options.record_weights) trace.weight_history.push_back(w);

    if (t % config.metric_stride == 0) {
      accumulate_clean(chain, samples, w, state, buf, metric_loss, metric_grad);
      trace.metric_iterations.push_back(t);
      trace.grad_norm.push_back(metric_grad.norm());
      trace.loss.push_back(metric_loss);
      trace.delta_active.push_back(fwd_scheduled ? 1 : 0);
      trace.eps_active.push_back(bwd_scheduled ? 1 : 0);
    }

    bool fwd_hit = false, bwd_hit = false;
    auto harvest_events = [&](PassState& s) {
      for (auto& ev : s.events) {
        const bool nonzero = ev.value.size() > 0 && ev.value.norm() > 0.0;
        if (ev.pass == PassKind::kForward) {
          fwd_hit = fwd_hit || nonzero;
        } else {
          bwd_hit = bwd_hit || nonzero;
        }
        if (options.record_events) trace.events.push_back(std::move(ev));
      }
      s.events.clear();
    };

    if (config.mode == GradientMode::kStochastic) {
      SplitMix64 pick(derive_stream({config.seed, kPickTag, static_cast<std::uint64_t>(t)}));
      const long idx = static_cast<long>(pick() % static_cast<std::uint64_t>(m));
      forward_perturbed(chain, samples[idx], w, draws, state);
      backward_perturbed(chain, w, draws, state);
      weight_gradients(chain, w, state);
      stack_gradient(chain, state, estimate);
      harvest_events(state);
    } else {
      estimate.setZero();
      for (long l = 0; l < m; ++l) {
        forward_perturbed(chain, samples[l], w, draws, state);
        backward_perturbed(chain, w, draws, state);
        weight_gradients(chain, w, state);
        stack_gradient(chain, state, buf);
        estimate += buf;
        if (per_sample_events) harvest_events(state);
      }
      estimate /= static_cast<double>(m);
      if (!per_sample_events) {
        // One shared draw covered every sample pass: log it once.
        for (int i = 1; i <= chain.size(); ++i) {
          for (PassKind pass : {PassKind::kForward, PassKind::kBackward}) {
            const auto& slot =
                (pass == PassKind::kForward) ? draws.forward[i] : draws.backward[i];
            if (!slot.has_value()) continue;
            const bool nonzero = slot->norm() > 0.0;
            if (pass == PassKind::kForward) {
              fwd_hit = fwd_hit || nonzero;
            } else {
              bwd_hit = bwd_hit || nonzero;
            }
            if (options.record_events) {
              trace.events.push_back(PerturbationEvent{t, i, pass, *slot});
            }
          }
        }
      }
    }
    if (fwd_hit) ++trace.q_forward;
    if (bwd_hit) ++trace.q_backward;

    estimate += chain.regularizer().gradient(w);
    if (config.sampling_noise_std > 0.0) {
      SplitMix64 noise(derive_stream({config.seed, kNoiseTag, static_cast<std::uint64_t>(t)}));
      for (int j = 0; j < wd; ++j) estimate(j) += config.sampling_noise_std * noise.normal();
    }

    next = w - config.step_size * estimate;
    if (config.momentum > 0.0) next += config.momentum * (w - prev);
    prev = w;
    w = next;
    trace.completed_iterations = t + 1;

    if (!w.allFinite() || w.norm() > config.divergence_norm) {
      trace.diverged = true;
      break;
    }
  }

  if (options.record_weights) trace.weight_history.push_back(w);
  trace.final_weights = w;
  trace.ewma = ewma_series(trace.grad_norm, config.ewma_coefficient);
  return trace;
}

}  // namespace chainsgd
