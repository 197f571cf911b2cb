#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chainsgd/experiments.hpp"
#include "chainsgd/rng.hpp"

using namespace chainsgd;

namespace {

Dataset small_data(int d, long m, std::uint64_t seed, Regularizer::Kind kind = Regularizer::Kind::kL2,
                   double rho = 0.1) {
  DatasetSpec spec;
  spec.dimension = d;
  spec.sample_count = m;
  spec.seed = seed;
  spec.regularizer = kind;
  spec.regularizer_weight = rho;
  return generate_logreg_data(spec);
}

}  // namespace

TEST_CASE("classifier chain has the expected shape") {
  const Chain chain = logistic_chain(10, Regularizer::L2(0.1));
  CHECK(chain.size() == 2);
  CHECK(chain.weight_dim() == 10);
  CHECK(chain.input_dim() == 11);
  CHECK(chain.op(1).output_dim() == 1);
  CHECK(chain.op(2).weight_dim() == 0);
}

TEST_CASE("curvature cap dominates observed gradient quotients") {
  const Dataset data = small_data(4, 60, 21);
  const Chain chain = logistic_chain(4, Regularizer::L2(0.1));
  const double cap = quadratic_upper_curvature(chain, data);
  SplitMix64 rng(99);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd a(4), b(4);
    for (int j = 0; j < 4; ++j) {
      a(j) = rng.uniform(-2.0, 2.0);
      b(j) = rng.uniform(-2.0, 2.0);
    }
    const double lhs = (full_gradient(chain, data, a) - full_gradient(chain, data, b)).norm();
    CHECK(lhs <= cap * (a - b).norm() * (1.0 + 1e-12));
  }
}

TEST_CASE("fnv1a matches the reference vectors") {
  CHECK(fnv1a("") == 14695981039346656037ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("ab") != fnv1a("ba"));
}

TEST_CASE("reference optimum lies below random probes") {
  const Dataset data = small_data(3, 80, 5);
  const Chain chain = logistic_chain(3, Regularizer::L2(0.1));
  const LossStarReport report = loss_star_oracle(chain, data);
  CHECK(report.gradient_norm < 1e-10);

  SplitMix64 rng(4);
  for (int probe = 0; probe < 5000; ++probe) {
    Eigen::VectorXd w(3);
    for (int j = 0; j < 3; ++j) w(j) = rng.uniform(-3.0, 3.0);
    CHECK(full_loss(chain, data, w) >= report.loss_star);
  }

  const LossStarReport tighter = loss_star_oracle(chain, data, 1e-12);
  CHECK(std::abs(tighter.loss_star - report.loss_star) < 1e-8);
}

TEST_CASE("reference optimum refuses non-strongly-convex objectives") {
  const Dataset data = small_data(3, 20, 5, Regularizer::Kind::kSmoothNonconvex, 0.001);
  const Chain chain = logistic_chain(3, Regularizer::SmoothNonconvex(0.001));
  CHECK_THROWS(loss_star_oracle(chain, data));
}

TEST_CASE("forward shift counterexample lands on the shifted fixed point") {
  const GdBiasReport report = counterexample_gd_bias(0.5, 0.1, 200, 1.0);
  REQUIRE(report.iterates.size() == 201);
  CHECK(report.iterates[0] == 1.0);
  CHECK(report.iterates[1] == 0.7);
  CHECK(report.fixed_point == -0.5);
  CHECK(report.final_gap < 1e-9);
  CHECK(report.contracting);
  CHECK(report.contraction_factor == doctest::Approx(0.8));

  const GdBiasReport quarter = counterexample_gd_bias(1.0, 0.25, 100, 1.0);
  CHECK(quarter.fixed_point == -1.0);
  CHECK(quarter.contraction_factor == doctest::Approx(0.5));
  CHECK(quarter.final_gap < 1e-12);

  const GdBiasReport clean = counterexample_gd_bias(0.0, 0.1, 200, 1.0);
  CHECK(std::abs(clean.iterates.back()) < 1e-9);

  const GdBiasReport large = counterexample_gd_bias(0.5, 0.6, 50, 1.0);
  CHECK_FALSE(large.contracting);
}

namespace {

// The replayed log series and the optimizer trace describe one trajectory;
// they must agree wherever the trace has finite nonzero entries.
void check_log_agreement(const std::vector<double>& norms, const std::vector<double>& logs) {
  REQUIRE(norms.size() <= logs.size());
  for (std::size_t t = 0; t < norms.size(); ++t) {
    if (norms[t] > 0.0 && std::isfinite(norms[t])) {
      CHECK(std::abs(std::log10(norms[t]) - logs[t]) < 1e-9);
    }
  }
}

}  // namespace

TEST_CASE("top-1 compression freezes the first-stage weights") {
  const Top1Report report = counterexample_top1(top1_plain_matrix(), 1.0, 0.1, 0.0, 1000);
  REQUIRE(report.clean_log10.size() == 1001);
  REQUIRE(report.compressed_log10.size() == 1001);
  REQUIRE(report.clean_after_one.size() == 2);
  CHECK(report.clean_after_one(0) == 0.0);
  CHECK(report.clean_after_one(1) == 0.0);
  CHECK(std::abs(report.compressed_after_one(0) - 3.0) < 1e-12);
  CHECK(std::abs(report.compressed_after_one(1) - (-2.6)) < 1e-12);
  CHECK(report.clean_final == 0.0);
  CHECK(report.clean_min == 0.0);
  CHECK(report.compressed_min > 0.1);
  CHECK(report.compressed_norms.size() > 50);  // a substantial overflow-free prefix
  check_log_agreement(report.clean_norms, report.clean_log10);
  check_log_agreement(report.compressed_norms, report.compressed_log10);
}

TEST_CASE("momentum rescues the clean run but not the compressed one") {
  const Top1Report report = counterexample_top1(top1_momentum_matrix(), 1.0, 0.05, 0.9, 1000);
  REQUIRE(report.clean_log10.size() == 1001);
  REQUIRE(report.compressed_log10.size() == 1001);
  CHECK(report.clean_final < 1e-3);
  CHECK(report.compressed_min >= 1e-3);
  check_log_agreement(report.clean_norms, report.clean_log10);
  check_log_agreement(report.compressed_norms, report.compressed_log10);
}

TEST_CASE("sigmoid attenuation bias matches the closed form") {
  const SigmoidBiasReport report = counterexample_sigmoid_bias(1.0, 200000, 7);
  CHECK(report.derivative_at_zero == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::abs(report.analytic_bias - 0.053388) < 1e-6);
  CHECK(std::abs(report.mc_estimate - report.analytic_bias) <= 3.0 * report.mc_se + 1e-12);

  double previous = 0.0;
  for (double a : {0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) {
    const SigmoidBiasReport r = counterexample_sigmoid_bias(a, 1, 0);
    CHECK(r.analytic_bias > previous);
    previous = r.analytic_bias;
  }
  const SigmoidBiasReport tiny = counterexample_sigmoid_bias(1e-6, 1, 0);
  CHECK(std::abs(tiny.analytic_bias) < 1e-9);
}

TEST_CASE("catalog derivative check stays under tolerance") {
  const GradCheckReport report = catalog_gradient_check(25, 3);
  REQUIRE(report.entries.size() == 6);
  CHECK(report.worst < 1e-6);
  for (const auto& entry : report.entries) CHECK(entry.max_error < 1e-6);
}

TEST_CASE("cell expansion produces labeled plans with one baseline") {
  SweepGrid grid;
  grid.regime = Regime::kFrequentZeroMean;
  grid.forward_scales = {0.0, 2.0};
  grid.backward_scales = {0.0, 2.0};
  const auto cells = expand_cells(grid);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].label == "standard");
  CHECK(cells[0].plan.empty());
  int standards = 0;
  for (const auto& cell : cells) standards += cell.label == "standard" ? 1 : 0;
  CHECK(standards == 1);

  SweepGrid biased;
  biased.regime = Regime::kFrequentBiasedBackward;
  biased.backward_scales = {0.5, 1.0};
  const auto bcells = expand_cells(biased);
  REQUIRE(bcells.size() == 3);  // injected baseline + two shifted cells
  CHECK(bcells[0].label == "standard");
  CHECK(bcells[1].plan.backward.count(2) == 1);
  CHECK_FALSE(bcells[1].plan.backward.at(2).dist.zero_mean());

  SweepGrid inter;
  inter.regime = Regime::kIntermittentForward;
  inter.forward_scales = {2.0};
  inter.intervals = {1, 10};
  const auto icells = expand_cells(inter);
  REQUIRE(icells.size() == 3);
  CHECK(icells[0].label == "standard");
  CHECK(icells[1].plan.forward.at(1).schedule.interval == 1);
  CHECK(icells[2].plan.forward.at(1).schedule.interval == 10);
}

TEST_CASE("burn-in strictly reduces the objective") {
  const Dataset data = small_data(3, 50, 2);
  const Chain chain = logistic_chain(3, Regularizer::L2(0.1));
  const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(3);
  const Eigen::VectorXd w = burn_in_weights(chain, data, 200);
  CHECK(full_loss(chain, data, w) < full_loss(chain, data, w0));
  CHECK(burn_in_weights(chain, data, 0).norm() == 0.0);
}

TEST_CASE("sweeps assemble identically for any worker count") {
  const Dataset data = small_data(3, 40, 12);
  const Chain chain = logistic_chain(3, Regularizer::L2(0.1));

  SweepGrid grid;
  grid.regime = Regime::kFrequentZeroMean;
  grid.step_sizes = {1e-2, 1e-3};
  grid.forward_scales = {0.0, 1.0};
  grid.backward_scales = {0.0};
  grid.repetitions = 2;
  grid.burn_in = 100;
  grid.base.horizon = 300;
  grid.base.sampling_noise_std = 0.001;
  grid.base.seed = 31;

  const SweepResult serial = sweep(chain, data, grid);
  grid.workers = 3;
  const SweepResult threaded = sweep(chain, data, grid);

  REQUIRE(serial.runs.size() == threaded.runs.size());
  REQUIRE(serial.runs.size() == 2 * 2 * 2);
  for (std::size_t k = 0; k < serial.runs.size(); ++k) {
    CHECK(serial.runs[k].metrics.stable_gradient_norm ==
          threaded.runs[k].metrics.stable_gradient_norm);
    CHECK(serial.runs[k].seed == threaded.runs[k].seed);
    CHECK(serial.runs[k].final_loss == threaded.runs[k].final_loss);
  }

  const std::string dir_a = "sweep_test_a";
  const std::string dir_b = "sweep_test_b";
  write_sweep_csv(serial, dir_a);
  write_sweep_csv(threaded, dir_b);
  auto slurp = [](const std::string& dir, const char* name) {
    std::ifstream in(std::filesystem::path(dir) / name, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  };
  CHECK(slurp(dir_a, "sweep_runs.csv") == slurp(dir_b, "sweep_runs.csv"));
  CHECK(slurp(dir_a, "sweep_cells.csv") == slurp(dir_b, "sweep_cells.csv"));
  CHECK(slurp(dir_a, "sweep_runs.csv").rfind("# schema=sweep_runs/1", 0) == 0);
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);

  // Repetitions share seeds across cells so cells differ only by their plans.
  const int standard = serial.cell_index("standard");
  const int noisy = serial.cell_index("f1_b0");
  REQUIRE(standard >= 0);
  REQUIRE(noisy >= 0);
  const SweepRunResult *std_rep0 = nullptr, *noisy_rep0 = nullptr;
  for (const auto& r : serial.runs) {
    if (r.step_index == 0 && r.repetition == 0) {
      if (r.cell == standard) std_rep0 = &r;
      if (r.cell == noisy) noisy_rep0 = &r;
    }
  }
  REQUIRE(std_rep0 != nullptr);
  REQUIRE(noisy_rep0 != nullptr);
  CHECK(std_rep0->seed == noisy_rep0->seed);
  CHECK(std_rep0->q_forward == 0);
  CHECK(noisy_rep0->q_forward == grid.base.horizon);
}

TEST_CASE("moment and rate bounds dominate measurements on a small problem") {
  const Dataset data = small_data(3, 30, 8);
  const Chain chain = logistic_chain(3, Regularizer::L2(0.1));

  PerturbationPlan plan;
  plan.forward[1] = PlanEntry{Distribution::ZeroMeanUniform(0.3), Schedule::EveryIteration()};
  plan.backward[2] = PlanEntry{Distribution::ZeroMeanUniform(0.3), Schedule::EveryIteration()};

  BoundCheckOptions options;
  options.weight_points = 3;
  options.trials = 60;
  options.corpus_trials = 3;
  options.seed = 17;
  options.check_rates = true;
  options.horizon = 200;
  options.sampling_noise_std = 0.001;

  const BoundCheckReport report = bound_check(chain, data, plan, options);
  CHECK_FALSE(report.any_violation());
  CHECK(report.estimate.lipschitz_available);
  CHECK(report.admissibility_checked);

  int moment_rows = 0, rate_rows = 0;
  for (const auto& row : report.rows) {
    if (row.quantity == "gradient_error_second_moment" ||
        row.quantity == "gradient_error_mean_sq") {
      ++moment_rows;
      CHECK(row.theoretical > 0.0);
      CHECK(row.empirical >= 0.0);
    }
    if (row.quantity.rfind("mean_sq_gradient", 0) == 0 ||
        row.quantity.rfind("final_gap", 0) == 0) {
      ++rate_rows;
    }
  }
  CHECK(moment_rows == 6);
  CHECK(rate_rows == 4);

  const std::string dir = "bound_test_out";
  write_bound_csv(report, dir);
  std::ifstream in(std::filesystem::path(dir) / "bound_report.csv");
  CHECK(in.good());
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero-perturbation plan yields all-zero perturbation terms") {
  const Dataset data = small_data(3, 20, 8);
  const Chain chain = logistic_chain(3, Regularizer::L2(0.1));
  BoundCheckOptions options;
  options.weight_points = 2;
  options.trials = 4;
  options.corpus_trials = 1;
  options.check_rates = false;
  const BoundCheckReport report = bound_check(chain, data, PerturbationPlan{}, options);
  CHECK_FALSE(report.any_violation());
  for (const auto& row : report.rows) {
    CHECK(row.theoretical == 0.0);
    CHECK(row.empirical == 0.0);
  }
}

TEST_CASE("configuration glue builds the advertised objects") {
  const ConfigFile cfg = ConfigFile::parse_string(
      "[dataset]\n"
      "dimension = 4\n"
      "samples = 25\n"
      "regularizer = l2\n"
      "rho = 0.1\n"
      "seed = 6\n"
      "[plan]\n"
      "forward_dist = constant\n"
      "forward_constant = 0.5\n"
      "backward_dist = zero_mean_uniform\n"
      "backward_scale = 2\n"
      "backward_schedule = periodic\n"
      "backward_interval = 10\n"
      "[run]\n"
      "step_size = 0.01\n"
      "horizon = 100\n"
      "mode = stochastic\n"
      "seed = 9\n"
      "[grid]\n"
      "regime = intermittent_forward\n"
      "steps = 1e-2, 1e-3\n"
      "forward_scales = 2\n"
      "intervals = 1, 10\n"
      "reps = 2\n");

  const DatasetSpec spec = dataset_spec_from(cfg);
  CHECK(spec.dimension == 4);
  CHECK(spec.sample_count == 25);
  CHECK(spec.regularizer == Regularizer::Kind::kL2);
  CHECK(spec.seed == 6);

  const Chain chain = logistic_chain(spec.dimension, regularizer_from(spec));
  const PerturbationPlan plan = plan_from(cfg, chain);
  REQUIRE(plan.forward.count(1) == 1);
  CHECK(plan.forward.at(1).dist.kind == Distribution::Kind::kConstant);
  CHECK(plan.forward.at(1).dist.constant(0) == 0.5);
  REQUIRE(plan.backward.count(2) == 1);
  CHECK(plan.backward.at(2).schedule.kind == Schedule::Kind::kPeriodic);
  CHECK(plan.backward.at(2).schedule.interval == 10);

  const RunConfig rc = run_config_from(cfg);
  CHECK(rc.mode == GradientMode::kStochastic);
  CHECK(rc.horizon == 100);
  CHECK(rc.seed == 9);

  const SweepGrid grid = sweep_grid_from(cfg);
  CHECK(grid.regime == Regime::kIntermittentForward);
  CHECK(grid.step_sizes.size() == 2);
  CHECK(grid.intervals.size() == 2);
  CHECK(grid.base.mode == GradientMode::kStochastic);

  const BoundCheckOptions bo = bound_options_from(cfg);
  CHECK(bo.seed == 9);  // falls back to the run seed
  CHECK(bo.config_hash == fnv1a(cfg.serialize()));
  CHECK(bo.config_hash != 0);
}

TEST_CASE("intermittent regime defaults to stochastic sampling") {
  const ConfigFile cfg = ConfigFile::parse_string(
      "[grid]\nregime = intermittent_forward\n[run]\nstep_size = 0.01\n");
  CHECK(sweep_grid_from(cfg).base.mode == GradientMode::kStochastic);
  const ConfigFile freq = ConfigFile::parse_string(
      "[grid]\nregime = frequent_zero_mean\n[run]\nstep_size = 0.01\n");
  CHECK(sweep_grid_from(freq).base.mode == GradientMode::kFullObjective);
}

TEST_CASE("trace export writes one row per evaluated iteration") {
  const Dataset data = small_data(3, 10, 8);
  const Chain chain = logistic_chain(3, Regularizer::L2(0.1));
  RunConfig config;
  config.step_size = 0.01;
  config.horizon = 12;
  config.metric_stride = 4;
  const RunTrace trace = run(chain, data, PerturbationPlan{}, config);
  const std::string dir = "trace_test_out";
  write_trace_csv(trace, dir, "trace.csv");
  std::ifstream in(std::filesystem::path(dir) / "trace.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2 + 3);  // header comment, columns, three evaluated iterations
  std::filesystem::remove_all(dir);
}
