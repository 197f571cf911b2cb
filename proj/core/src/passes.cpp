#include "chainsgd/passes.hpp"

#include <cmath>
#include <stdexcept>

namespace chainsgd {

namespace {

bool finite(const Eigen::VectorXd& v) { return v.allFinite(); }

void apply_site(PassKind pass, int layer, const IterationDraws& draws, Eigen::VectorXd& value,
                PassState& state) {
  const auto& slot =
      (pass == PassKind::kForward) ? draws.forward[layer] : draws.backward[layer];
  const Compressor* comp =
      draws.plan != nullptr ? draws.plan->compressor(layer, pass) : nullptr;
  if (!slot.has_value() && comp == nullptr) return;

  const Eigen::VectorXd raw = value;
  if (slot.has_value()) {
    if (slot->size() != value.size()) {
      throw std::invalid_argument("perturbation draw has wrong dimension at stage " +
                                  std::to_string(layer));
    }
    value += *slot;
  }
  if (comp != nullptr && comp->kind == Compressor::Kind::kTopK) {
    value = top_k_compress(value, comp->k);
  }
  PerturbationEvent ev;
  ev.t = draws.t;
  ev.layer = layer;
  ev.pass = pass;
  ev.value = value - raw;
  state.events.push_back(std::move(ev));
}

}  // namespace

void PassState::resize_for(const Chain& chain) {
  const int n = chain.size();
  outputs.resize(n + 1);
  adjoints.resize(n);
  weight_grads.resize(n);
  events.clear();
  diverged = false;
}

IterationDraws draw_iteration_perturbations(const Chain& chain, const PerturbationPlan& plan,
                                            long t, std::uint64_t master_seed,
                                            std::uint64_t replicate) {
  const int n = chain.size();
  IterationDraws draws;
  draws.forward.resize(n + 1);
  draws.backward.resize(n + 1);
  draws.plan = &plan;
  draws.t = t;
  for (int i = 1; i <= n; ++i) {
    draws.forward[i] = sample_perturbation(plan, i, PassKind::kForward, t,
                                           chain.op(i).output_dim(), master_seed, replicate);
    if (i >= 2) {
      // The backward site at stage i perturbs the adjoint handed to stage
      // i-1, which has that stage's output dimension.
      draws.backward[i] =
          sample_perturbation(plan, i, PassKind::kBackward, t,
                              chain.op(i - 1).output_dim(), master_seed, replicate);
    }
  }
  return draws;
}

double forward_clean(const Chain& chain, const Eigen::VectorXd& sample,
                     const Eigen::VectorXd& weights, PassState& state) {
  if (weights.size() != chain.weight_dim()) {
    throw std::invalid_argument("forward_clean: stacked weight size mismatch");
  }
  state.resize_for(chain);
  state.outputs[0] = sample;
  for (int i = 1; i <= chain.size(); ++i) {
    state.outputs[i] = chain.op(i).forward(state.outputs[i - 1], chain.weights_of(weights, i));
    if (!finite(state.outputs[i])) state.diverged = true;
  }
  return state.outputs[chain.size()](0);
}

void backward_clean(const Chain& chain, const Eigen::VectorXd& weights, PassState& state) {
  const int n = chain.size();
  if (state.outputs.size() != static_cast<std::size_t>(n + 1) || state.outputs[0].size() == 0) {
    throw std::logic_error("backward_clean: run a forward pass first");
  }
  state.adjoints[n - 1] = Eigen::VectorXd::Ones(1);
  for (int i = n; i >= 2; --i) {
    const Eigen::MatrixXd j =
        chain.op(i).jac_input(state.outputs[i - 1], chain.weights_of(weights, i));
    state.adjoints[i - 2] = j.transpose() * state.adjoints[i - 1];
    if (!finite(state.adjoints[i - 2])) state.diverged = true;
  }
}

void weight_gradients(const Chain& chain, const Eigen::VectorXd& weights, PassState& state) {
  const int n = chain.size();
  for (int i = 1; i <= n; ++i) {
    const Eigen::MatrixXd j =
        chain.op(i).jac_weight(state.outputs[i - 1], chain.weights_of(weights, i));
    state.weight_grads[i - 1] = j.transpose() * state.adjoints[i - 1];
  }
}

double forward_perturbed(const Chain& chain, const Eigen::VectorXd& sample,
                         const Eigen::VectorXd& weights, const IterationDraws& draws,
                         PassState& state) {
  if (weights.size() != chain.weight_dim()) {
    throw std::invalid_argument("forward_perturbed: stacked weight size mismatch");
  }
  state.resize_for(chain);
  state.outputs[0] = sample;
  for (int i = 1; i <= chain.size(); ++i) {
    state.outputs[i] = chain.op(i).forward(state.outputs[i - 1], chain.weights_of(weights, i));
    apply_site(PassKind::kForward, i, draws, state.outputs[i], state);
    if (!finite(state.outputs[i])) state.diverged = true;
  }
  return state.outputs[chain.size()](0);
}

void backward_perturbed(const Chain& chain, const Eigen::VectorXd& weights,
                        const IterationDraws& draws, PassState& state) {
  const int n = chain.size();
  if (state.outputs.size() != static_cast<std::size_t>(n + 1) || state.outputs[0].size() == 0) {
    throw std::logic_error("backward_perturbed: run a forward pass first");
  }
  state.adjoints[n - 1] = Eigen::VectorXd::Ones(1);
  for (int i = n; i >= 2; --i) {
    const Eigen::MatrixXd j =
        chain.op(i).jac_input(state.outputs[i - 1], chain.weights_of(weights, i));
    state.adjoints[i - 2] = j.transpose() * state.adjoints[i - 1];
    apply_site(PassKind::kBackward, i, draws, state.adjoints[i - 2], state);
    if (!finite(state.adjoints[i - 2])) state.diverged = true;
  }
}

void stack_gradient(const Chain& chain, const PassState& state, Eigen::VectorXd& out) {
  out.resize(chain.weight_dim());
  for (int i = 1; i <= chain.size(); ++i) {
    out.segment(chain.weight_offset(i), chain.op(i).weight_dim()) = state.weight_grads[i - 1];
  }
}

double sample_loss(const Chain& chain, const Eigen::VectorXd& sample,
                   const Eigen::VectorXd& weights) {
  PassState state;
  return forward_clean(chain, sample, weights, state);
}

Eigen::VectorXd sample_gradient(const Chain& chain, const Eigen::VectorXd& sample,
                                const Eigen::VectorXd& weights) {
  PassState state;
  forward_clean(chain, sample, weights, state);
  backward_clean(chain, weights, state);
  weight_gradients(chain, weights, state);
  Eigen::VectorXd g;
  stack_gradient(chain, state, g);
  return g;
}

Eigen::VectorXd sample_gradient_perturbed(const Chain& chain, const Eigen::VectorXd& sample,
                                          const Eigen::VectorXd& weights,
                                          const PerturbationPlan& plan, long t,
                                          std::uint64_t master_seed) {
  PassState state;
  const IterationDraws draws = draw_iteration_perturbations(chain, plan, t, master_seed);
  forward_perturbed(chain, sample, weights, draws, state);
  backward_perturbed(chain, weights, draws, state);
  weight_gradients(chain, weights, state);
  Eigen::VectorXd g;
  stack_gradient(chain, state, g);
  return g;
}

double JacobianReport::max_error() const {
  double m = std::max(input_error, weight_error);
  if (mixed_error.has_value()) m = std::max(m, *mixed_error);
  return m;
}

namespace {

double block_error(const Eigen::MatrixXd& fd, const Eigen::MatrixXd& analytic) {
  const double denom = std::max(1.0, analytic.norm());
  return (fd - analytic).norm() / denom;
}

}  // namespace

JacobianReport check_jacobians(const Operator& op, const Eigen::VectorXd& input,
                               const Eigen::VectorXd& weights, double step_scale) {
  op.check_dims(input, weights);
  const int p = op.output_dim(), di = op.input_dim(), dw = op.weight_dim();

  Eigen::MatrixXd fd_in(p, di);
  Eigen::VectorXd x = input;
  for (int c = 0; c < di; ++c) {
    const double h = step_scale * (1.0 + std::abs(input(c)));
    x(c) = input(c) + h;
    const Eigen::VectorXd hi = op.forward(x, weights);
    x(c) = input(c) - h;
    const Eigen::VectorXd lo = op.forward(x, weights);
    x(c) = input(c);
    fd_in.col(c) = (hi - lo) / (2.0 * h);
  }

  Eigen::MatrixXd fd_w(p, dw);
  Eigen::VectorXd wv = weights;
  for (int c = 0; c < dw; ++c) {
    const double h = step_scale * (1.0 + std::abs(weights(c)));
    wv(c) = weights(c) + h;
    const Eigen::VectorXd hi = op.forward(input, wv);
    wv(c) = weights(c) - h;
    const Eigen::VectorXd lo = op.forward(input, wv);
    wv(c) = weights(c);
    fd_w.col(c) = (hi - lo) / (2.0 * h);
  }

  JacobianReport report;
  report.input_error = block_error(fd_in, op.jac_input(input, weights));
  report.weight_error = block_error(fd_w, op.jac_weight(input, weights));
  if (op.has_mixed()) {
    const Tensor3 analytic = op.jac_mixed(input, weights);
    const Tensor3 fd = fd_mixed_jacobian(op, input, weights, step_scale);
    const Eigen::MatrixXd a = analytic.matricized();
    const Eigen::MatrixXd f = fd.matricized();
    report.mixed_error = block_error(f, a);
  }
  return report;
}

Tensor3 fd_mixed_jacobian(const Operator& op, const Eigen::VectorXd& input,
                          const Eigen::VectorXd& weights, double step_scale) {
  const int p = op.output_dim(), dw = op.weight_dim(), di = op.input_dim();
  Tensor3 t(p, dw, di);
  Eigen::VectorXd x = input;
  for (int b = 0; b < di; ++b) {
    const double h = step_scale * (1.0 + std::abs(input(b)));
    x(b) = input(b) + h;
    const Eigen::MatrixXd hi = op.jac_weight(x, weights);
    x(b) = input(b) - h;
    const Eigen::MatrixXd lo = op.jac_weight(x, weights);
    x(b) = input(b);
    const Eigen::MatrixXd slice = (hi - lo) / (2.0 * h);
    for (int j = 0; j < p; ++j) {
      for (int a = 0; a < dw; ++a) t(j, a, b) = slice(j, a);
    }
  }
  return t;
}

double check_chain_gradient(const Chain& chain, const Eigen::VectorXd& sample,
                            const Eigen::VectorXd& weights, double step_scale) {
  const Eigen::VectorXd analytic = sample_gradient(chain, sample, weights);
  Eigen::VectorXd fd(weights.size());
  Eigen::VectorXd w = weights;
  for (int c = 0; c < weights.size(); ++c) {
    const double h = step_scale * (1.0 + std::abs(weights(c)));
    w(c) = weights(c) + h;
    const double hi = sample_loss(chain, sample, w);
    w(c) = weights(c) - h;
    const double lo = sample_loss(chain, sample, w);
    w(c) = weights(c);
    fd(c) = (hi - lo) / (2.0 * h);
  }
  return (fd - analytic).norm() / std::max(1.0, analytic.norm());
}

}  // namespace chainsgd
