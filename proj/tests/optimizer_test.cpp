#include <doctest.h>

#include <cmath>

#include "chainsgd/optimizer.hpp"
#include "chainsgd/passes.hpp"

using namespace chainsgd;

namespace {

Chain margin_quadratic_chain() {
  std::vector<OperatorPtr> ops;
  ops.push_back(make_logistic_link(1));
  ops.push_back(make_scalar_quadratic());
  return Chain(std::move(ops), Regularizer::None());
}

Dataset single_sample(double h, double y) {
  Dataset data;
  data.features = Eigen::MatrixXd::Constant(1, 1, h);
  data.labels = Eigen::VectorXd::Constant(1, y);
  return data;
}

}  // namespace

TEST_CASE("ewma follows s0 = x0 then the recursion") {
  const std::vector<double> s = ewma_series({0.0, 1.0}, 0.9);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(0.1).epsilon(1e-15));

  const std::vector<double> id = ewma_series({3.0, -1.0, 2.0}, 0.0);
  CHECK(id[0] == 3.0);
  CHECK(id[1] == -1.0);
  CHECK(id[2] == 2.0);

  CHECK_THROWS(ewma_series({1.0}, 1.0));
  CHECK_THROWS(ewma_series({1.0}, -0.1));
}

TEST_CASE("stability metrics average the trailing half and find the crossing") {
  RunTrace trace;
  trace.metric_iterations = {0, 1, 2, 3, 4, 5, 6, 7};
  trace.ewma = {8.0, 4.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  trace.grad_norm = trace.ewma;
  const StabilityMetrics m = stability_metrics(trace);
  CHECK(m.stable_gradient_norm == doctest::Approx(1.0));
  REQUIRE(m.stable_iteration.has_value());
  CHECK(*m.stable_iteration == 3);
}

TEST_CASE("constant series stabilizes immediately") {
  RunTrace trace;
  trace.metric_iterations = {0, 1, 2, 3};
  trace.ewma = {2.5, 2.5, 2.5, 2.5};
  const StabilityMetrics m = stability_metrics(trace);
  CHECK(m.stable_gradient_norm == doctest::Approx(2.5));
  REQUIRE(m.stable_iteration.has_value());
  CHECK(*m.stable_iteration == 0);
}

TEST_CASE("diverged traces report the last finite smoothed value and no crossing") {
  RunTrace trace;
  trace.diverged = true;
  trace.metric_iterations = {0, 1, 2, 3};
  const double inf = std::numeric_limits<double>::infinity();
  trace.ewma = {5.0, 2.0, inf, std::nan("")};
  const StabilityMetrics m = stability_metrics(trace);
  CHECK(m.stable_gradient_norm == 2.0);
  CHECK_FALSE(m.stable_iteration.has_value());
}

TEST_CASE("one perturbed step matches the hand-computed update") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::Constant(Eigen::VectorXd::Constant(1, 0.5)),
                              Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = 0.1;
  config.horizon = 1;
  config.initial_weights = Eigen::VectorXd::Constant(1, 1.0);
  const RunTrace trace = run(chain, data, plan, config);
  // z = w = 1, shifted to 1.5; estimate = 2 * 1.5 = 3; w' = 1 - 0.1 * 3.
  CHECK(trace.final_weights(0) == 0.7);
  CHECK(trace.q_forward == 1);
  CHECK(trace.q_backward == 0);
}

TEST_CASE("constant forward shift drives the iterate to the shifted fixed point") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::Constant(Eigen::VectorXd::Constant(1, 1.0)),
                              Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = 0.25;
  config.horizon = 200;
  config.initial_weights = Eigen::VectorXd::Constant(1, 1.0);
  config.metric_stride = 200;
  const RunTrace trace = run(chain, data, plan, config);
  CHECK(std::abs(trace.final_weights(0) - (-1.0)) < 1e-9);
}

TEST_CASE("plain and momentum updates replay the recurrence exactly") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);

  RunConfig config;
  config.step_size = 0.05;
  config.horizon = 25;
  config.momentum = 0.9;
  config.initial_weights = Eigen::VectorXd::Constant(1, 2.0);
  config.metric_stride = 25;
  RunOptions options;
  options.record_weights = true;
  const RunTrace trace = run(chain, data, PerturbationPlan{}, config, options);

  double w = 2.0, prev = 2.0;
  for (long t = 0; t < config.horizon; ++t) {
    const double g = 2.0 * w;  // d/dw (w^2)
    const double next = w - config.step_size * g + config.momentum * (w - prev);
    prev = w;
    w = next;
    CHECK(trace.weight_history[static_cast<std::size_t>(t) + 1](0) == w);
  }
  CHECK(trace.final_weights(0) == w);

  config.momentum = 0.0;
  const RunTrace plain = run(chain, data, PerturbationPlan{}, config);
  double wp = 2.0;
  for (long t = 0; t < config.horizon; ++t) wp = wp - config.step_size * 2.0 * wp;
  CHECK(plain.final_weights(0) == wp);
}

TEST_CASE("recorded metrics are the exact clean full-objective values") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::ZeroMeanUniform(2.0), Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = 0.01;
  config.horizon = 6;
  config.seed = 5;
  RunOptions options;
  options.record_weights = true;
  const RunTrace trace = run(chain, data, plan, config, options);
  REQUIRE(trace.grad_norm.size() == 6);
  for (std::size_t k = 0; k < trace.grad_norm.size(); ++k) {
    const Eigen::VectorXd& w = trace.weight_history[k];
    CHECK(trace.grad_norm[k] == full_gradient(chain, data, w).norm());
    CHECK(trace.loss[k] == full_loss(chain, data, w));
  }
}

TEST_CASE("metric stride subsamples the evaluation grid") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);
  RunConfig config;
  config.step_size = 0.01;
  config.horizon = 10;
  config.metric_stride = 3;
  const RunTrace trace = run(chain, data, PerturbationPlan{}, config);
  REQUIRE(trace.metric_iterations.size() == 4);
  CHECK(trace.metric_iterations[0] == 0);
  CHECK(trace.metric_iterations[1] == 3);
  CHECK(trace.metric_iterations[3] == 9);
}

TEST_CASE("runs are reproducible and seeds matter") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::ZeroMeanUniform(1.0), Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = 0.02;
  config.horizon = 50;
  config.seed = 77;
  config.sampling_noise_std = 0.01;
  const RunTrace a = run(chain, data, plan, config);
  const RunTrace b = run(chain, data, plan, config);
  CHECK((a.final_weights - b.final_weights).norm() == 0.0);
  REQUIRE(a.grad_norm.size() == b.grad_norm.size());
  for (std::size_t k = 0; k < a.grad_norm.size(); ++k) CHECK(a.grad_norm[k] == b.grad_norm[k]);

  config.seed = 78;
  const RunTrace c = run(chain, data, plan, config);
  CHECK((a.final_weights - c.final_weights).norm() > 0.0);
}

TEST_CASE("full-objective passes share one draw across samples") {
  const Chain chain = margin_quadratic_chain();
  Dataset data;
  data.features = Eigen::MatrixXd::Constant(2, 1, 1.0);  // two identical samples
  data.labels = -Eigen::VectorXd::Ones(2);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::ZeroMeanUniform(1.5), Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = 0.1;
  config.horizon = 1;
  config.seed = 13;
  config.initial_weights = Eigen::VectorXd::Constant(1, 1.0);
  const RunTrace trace = run(chain, data, plan, config);

  // With identical samples and a shared draw the averaged estimate equals the
  // single-sample perturbed gradient.
  const Eigen::VectorXd g = sample_gradient_perturbed(
      chain, data.sample_vector(0), config.initial_weights, plan, 0, config.seed);
  const double expected = 1.0 - 0.1 * g(0);
  CHECK(trace.final_weights(0) == expected);
}

TEST_CASE("stochastic mode draws one sample per iteration") {
  const Chain chain = margin_quadratic_chain();
  Dataset data;
  data.features = Eigen::MatrixXd::Ones(8, 1);
  data.labels = -Eigen::VectorXd::Ones(8);

  RunConfig config;
  config.step_size = 0.05;
  config.horizon = 30;
  config.mode = GradientMode::kStochastic;
  config.initial_weights = Eigen::VectorXd::Constant(1, 1.0);
  const RunTrace trace = run(chain, data, PerturbationPlan{}, config);
  // All samples are identical, so the stochastic path must match the plain
  // deterministic recurrence.
  double w = 1.0;
  for (long t = 0; t < config.horizon; ++t) w -= config.step_size * 2.0 * w;
  CHECK(trace.final_weights(0) == w);
}

TEST_CASE("divergence truncates the trace without throwing") {
  std::vector<OperatorPtr> ops;
  ops.push_back(make_affine_elementwise(2.0 * Eigen::MatrixXd::Identity(2, 2)));
  ops.push_back(make_inner_product_square(2));
  const Chain chain(std::move(ops), Regularizer::None());

  Dataset data;
  data.features = Eigen::MatrixXd::Ones(1, 1);
  data.labels = Eigen::VectorXd::Ones(1);

  RunConfig config;
  config.step_size = 10.0;
  config.horizon = 2000;
  config.initial_weights = Eigen::VectorXd::Ones(chain.weight_dim());
  const RunTrace trace = run(chain, data, PerturbationPlan{}, config);
  CHECK(trace.diverged);
  CHECK(trace.completed_iterations < config.horizon);

  // A lower cutoff stops sooner; a very high one lets the run go further.
  RunConfig tight = config;
  tight.divergence_norm = 1e3;
  const RunTrace early = run(chain, data, PerturbationPlan{}, tight);
  CHECK(early.diverged);
  CHECK(early.completed_iterations <= trace.completed_iterations);

  RunConfig loose = config;
  loose.divergence_norm = 1e200;
  const RunTrace late = run(chain, data, PerturbationPlan{}, loose);
  CHECK(late.completed_iterations >= trace.completed_iterations);
}

TEST_CASE("event log and site counters follow the schedule") {
  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::ZeroMeanUniform(1.0), Schedule::Periodic(3)};
  plan.backward[2] = PlanEntry{Distribution::ZeroMeanUniform(1.0), Schedule::EveryIteration()};

  RunConfig config;
  config.step_size = 0.01;
  config.horizon = 10;
  config.seed = 3;
  const RunTrace trace = run(chain, data, plan, config);
  CHECK(trace.q_forward == 4);  // t = 0, 3, 6, 9
  CHECK(trace.q_backward == 10);
  const EventCounts counts = count_event_iterations(trace.events);
  CHECK(counts.forward == trace.q_forward);
  CHECK(counts.backward == trace.q_backward);

  // Activity flags mirror the schedule.
  CHECK(trace.delta_active[0] == 1);
  CHECK(trace.delta_active[1] == 0);
  CHECK(trace.delta_active[3] == 1);
  CHECK(trace.eps_active[7] == 1);
}

TEST_CASE("invalid configurations are rejected") {
  RunConfig config;
  config.step_size = 0.0;
  CHECK_THROWS(config.validate());
  config.step_size = 0.1;
  config.momentum = 1.0;
  CHECK_THROWS(config.validate());
  config.momentum = 0.0;
  config.ewma_coefficient = 1.0;
  CHECK_THROWS(config.validate());
  config.ewma_coefficient = 0.99;
  config.metric_stride = 0;
  CHECK_THROWS(config.validate());

  const Chain chain = margin_quadratic_chain();
  const Dataset data = single_sample(1.0, -1.0);
  RunConfig bad;
  bad.initial_weights = Eigen::VectorXd::Zero(3);
  CHECK_THROWS(run(chain, data, PerturbationPlan{}, bad));
}
