// Command-line front end: data generation, single runs, sweeps, bound
// reports, counterexamples, and derivative checks. Every subcommand takes
// --seed and --out; config-driven commands take --config.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chainsgd/csv.hpp"
#include "chainsgd/experiments.hpp"

using namespace chainsgd;

namespace {

struct SeedOpt {
  std::uint64_t value = 0;
  bool given = false;
};

void add_seed(CLI::App* cmd, SeedOpt& seed, const char* what) {
  cmd->add_option_function<std::uint64_t>(
         "--seed",
         [&seed](std::uint64_t v) {
           seed.value = v;
           seed.given = true;
         },
         what)
      ->expected(1);
}

ConfigFile load_config(const std::string& path) { return ConfigFile::parse_file(path); }

int cmd_gen_data(const std::string& config_path, const std::string& out, const SeedOpt& seed) {
  ConfigFile cfg = load_config(config_path);
  if (seed.given) cfg.set("dataset", "seed", std::to_string(seed.value));
  const DatasetSpec spec = dataset_spec_from(cfg);
  const Dataset data = generate_logreg_data(spec);

  std::vector<std::string> columns;
  for (int j = 0; j < spec.dimension; ++j) columns.push_back("f" + std::to_string(j));
  columns.push_back("label");
  CsvWriter csv("dataset", 1, columns);
  std::vector<std::string> row(columns.size());
  for (long l = 0; l < data.size(); ++l) {
    for (int j = 0; j < spec.dimension; ++j) row[j] = CsvWriter::num(data.features(l, j));
    row.back() = CsvWriter::num(data.labels(l));
    csv.row(row);
  }
  csv.save(out, "dataset.csv");
  std::printf("wrote %ld samples with %d features to %s/dataset.csv\n", data.size(),
              spec.dimension, out.c_str());
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out, const SeedOpt& seed) {
  ConfigFile cfg = load_config(config_path);
  if (seed.given) cfg.set("run", "seed", std::to_string(seed.value));
  const DatasetSpec spec = dataset_spec_from(cfg);
  const Dataset data = generate_logreg_data(spec);
  const Chain chain = logistic_chain(spec.dimension, regularizer_from(spec));
  const PerturbationPlan plan = plan_from(cfg, chain);
  const RunConfig config = run_config_from(cfg);

  const RunTrace trace = run(chain, data, plan, config);
  write_trace_csv(trace, out, "trace.csv");
  const StabilityMetrics metrics = stability_metrics(trace);

  std::printf("iterations        %ld\n", trace.completed_iterations);
  std::printf("perturbed (f/b)   %ld / %ld\n", trace.q_forward, trace.q_backward);
  std::printf("final loss        %.8g\n", trace.loss.back());
  std::printf("final grad norm   %.8g\n", trace.grad_norm.back());
  std::printf("stable grad norm  %.8g\n", metrics.stable_gradient_norm);
  if (metrics.stable_iteration) {
    std::printf("stable at t       %ld\n", *metrics.stable_iteration);
  }
  if (trace.diverged) std::printf("run diverged\n");
  std::printf("trace: %s/trace.csv\n", out.c_str());
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out, const SeedOpt& seed,
              int workers) {
  ConfigFile cfg = load_config(config_path);
  if (seed.given) cfg.set("run", "seed", std::to_string(seed.value));
  if (workers > 0) cfg.set("grid", "workers", std::to_string(workers));
  const DatasetSpec spec = dataset_spec_from(cfg);
  const Dataset data = generate_logreg_data(spec);
  const Chain chain = logistic_chain(spec.dimension, regularizer_from(spec));
  const SweepGrid grid = sweep_grid_from(cfg);

  const SweepResult result = sweep(chain, data, grid);
  write_sweep_csv(result, out);

  std::printf("%-16s %-10s %-14s %s\n", "cell", "step", "stable_norm", "diverged");
  for (const auto& summary : result.summaries) {
    std::printf("%-16s %-10.4g %-14.6g %d/%d\n", result.cells[summary.cell].label.c_str(),
                grid.step_sizes[summary.step_index], summary.mean_stable_norm,
                summary.diverged_count, grid.repetitions);
  }
  std::printf("%zu runs -> %s/sweep_runs.csv, %s/sweep_cells.csv\n", result.runs.size(),
              out.c_str(), out.c_str());
  return 0;
}

int cmd_bounds(const std::string& config_path, const std::string& out, const SeedOpt& seed) {
  ConfigFile cfg = load_config(config_path);
  if (seed.given) cfg.set("bounds", "seed", std::to_string(seed.value));
  const DatasetSpec spec = dataset_spec_from(cfg);
  const Dataset data = generate_logreg_data(spec);
  const Chain chain = logistic_chain(spec.dimension, regularizer_from(spec));
  const PerturbationPlan plan = plan_from(cfg, chain);
  const BoundCheckOptions options = bound_options_from(cfg);

  const BoundCheckReport report = bound_check(chain, data, plan, options);
  write_bound_csv(report, out);

  std::printf("%-30s %-6s %-14s %-14s %s\n", "quantity", "point", "theoretical", "empirical",
              "ok");
  for (const auto& row : report.rows) {
    std::printf("%-30s %-6d %-14.6g %-14.6g %s\n", row.quantity.c_str(), row.point,
                row.theoretical, row.empirical, row.violated ? "VIOLATED" : "yes");
  }
  if (report.admissibility_checked) {
    std::printf("admissible: forward %s, backward %s\n",
                report.admissibility.forward.admissible ? "yes" : "no",
                report.admissibility.backward.admissible ? "yes" : "no");
  }
  std::printf("report: %s/bound_report.csv\n", out.c_str());
  if (report.any_violation()) {
    std::fprintf(stderr, "bound violation detected\n");
    return 1;
  }
  return 0;
}

int cmd_gd_bias(double shift, double step, long horizon, double x0, const std::string& out) {
  const GdBiasReport report = counterexample_gd_bias(shift, step, horizon, x0);

  CsvWriter csv("gd_bias", 1, {"t", "x"});
  for (std::size_t t = 0; t < report.iterates.size(); ++t) {
    csv.row({CsvWriter::integer(static_cast<long>(t)), CsvWriter::num(report.iterates[t])});
  }
  csv.save(out, "gd_bias.csv");

  std::printf("fixed point        %.8g\n", report.fixed_point);
  std::printf("final gap          %.3e\n", report.final_gap);
  std::printf("contraction factor %.8g (%s)\n", report.contraction_factor,
              report.contracting ? "contracting" : "not contracting");
  std::printf("trace: %s/gd_bias.csv\n", out.c_str());
  return 0;
}

int cmd_top1(const std::string& preset, std::vector<double> matrix, double scale, double step,
             bool step_given, double momentum, bool momentum_given, long horizon,
             const std::string& out) {
  const bool plain = preset == "plain";
  Eigen::MatrixXd a = plain ? top1_plain_matrix() : top1_momentum_matrix();
  if (matrix.size() == 4) {
    a << matrix[0], matrix[1], matrix[2], matrix[3];
  }
  if (!step_given) step = plain ? 0.1 : 0.05;
  if (!momentum_given) momentum = plain ? 0.0 : 0.9;

  const Top1Report report = counterexample_top1(a, scale, step, momentum, horizon);

  // The optimizer trace stops once doubles overflow; the log10 columns carry
  // the rescaled replay to the full horizon.
  CsvWriter csv("top1", 2,
                {"t", "clean_norm", "compressed_norm", "clean_log10", "compressed_log10"});
  for (std::size_t t = 0; t < report.clean_log10.size(); ++t) {
    csv.row({CsvWriter::integer(static_cast<long>(t)),
             t < report.clean_norms.size() ? CsvWriter::num(report.clean_norms[t]) : "",
             t < report.compressed_norms.size() ? CsvWriter::num(report.compressed_norms[t])
                                                : "",
             CsvWriter::num(report.clean_log10[t]),
             CsvWriter::num(report.compressed_log10[t])});
  }
  csv.save(out, "top1.csv");

  std::printf("clean w1 after one step       (%.8g, %.8g)\n", report.clean_after_one(0),
              report.clean_after_one(1));
  std::printf("compressed w1 after one step  (%.8g, %.8g)\n", report.compressed_after_one(0),
              report.compressed_after_one(1));
  std::printf("clean final / min norm        %.8g / %.8g\n", report.clean_final,
              report.clean_min);
  std::printf("compressed final log10 norm   %.8g\n", report.compressed_final_log10);
  std::printf("compressed min norm           %.8g\n", report.compressed_min);
  std::printf("trace: %s/top1.csv\n", out.c_str());
  return 0;
}

int cmd_sigmoid(double point, long draws, const SeedOpt& seed, const std::string& out) {
  const SigmoidBiasReport report = counterexample_sigmoid_bias(point, draws, seed.value);

  CsvWriter csv("sigmoid_bias", 1,
                {"point", "analytic_bias", "mc_estimate", "mc_se", "draws"});
  csv.row({CsvWriter::num(report.point), CsvWriter::num(report.analytic_bias),
           CsvWriter::num(report.mc_estimate), CsvWriter::num(report.mc_se),
           CsvWriter::integer(report.draws)});
  csv.save(out, "sigmoid_bias.csv");

  std::printf("derivative at 0     %.8g\n", report.derivative_at_zero);
  std::printf("derivative at %.3g  %.8g\n", report.point, report.derivative_at_point);
  std::printf("analytic bias       %.8g\n", report.analytic_bias);
  std::printf("mc estimate         %.8g +/- %.3g (se, %ld draws)\n", report.mc_estimate,
              report.mc_se, report.draws);
  std::printf("report: %s/sigmoid_bias.csv\n", out.c_str());
  return 0;
}

int cmd_gradcheck(int points, const SeedOpt& seed, const std::string& out) {
  const GradCheckReport report = catalog_gradient_check(points, seed.value);

  CsvWriter csv("gradcheck", 1, {"operator", "max_rel_error"});
  for (const auto& entry : report.entries) {
    csv.row({entry.name, CsvWriter::num(entry.max_error)});
  }
  csv.save(out, "gradcheck.csv");

  for (const auto& entry : report.entries) {
    std::printf("%-24s %.3e\n", entry.name.c_str(), entry.max_error);
  }
  std::printf("worst               %.3e\n", report.worst);
  std::printf("report: %s/gradcheck.csv\n", out.c_str());
  if (report.worst >= 1e-6) {
    std::fprintf(stderr, "derivative check failed\n");
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perturbed-SGD laboratory for composite operator chains"};
  app.require_subcommand(1);
  int code = 0;

  std::string config_path;
  std::string out = "out";
  SeedOpt seed;
  int workers = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a logistic-regression dataset");
  gen->add_option("--config", config_path, "Config file with a [dataset] section")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(gen, seed, "Override the dataset seed");
  gen->callback([&]() { code = cmd_gen_data(config_path, out, seed); });

  auto* runc = app.add_subcommand("run", "Run one optimizer trajectory");
  runc->add_option("--config", config_path, "Config file ([dataset], [plan], [run])")
      ->required()
      ->check(CLI::ExistingFile);
  runc->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(runc, seed, "Override the run seed");
  runc->callback([&]() { code = cmd_run(config_path, out, seed); });

  auto* sweepc = app.add_subcommand("sweep", "Run a step-size/perturbation sweep");
  sweepc->add_option("--config", config_path, "Config file ([dataset], [grid], [run])")
      ->required()
      ->check(CLI::ExistingFile);
  sweepc->add_option("--out", out, "Output directory")->capture_default_str();
  sweepc->add_option("--workers", workers, "Override the worker count");
  add_seed(sweepc, seed, "Override the base run seed");
  sweepc->callback([&]() { code = cmd_sweep(config_path, out, seed, workers); });

  auto* boundsc =
      app.add_subcommand("bounds", "Compare theoretical bounds against measurement");
  boundsc->add_option("--config", config_path, "Config file ([dataset], [plan], [bounds])")
      ->required()
      ->check(CLI::ExistingFile);
  boundsc->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(boundsc, seed, "Override the probe seed");
  boundsc->callback([&]() { code = cmd_bounds(config_path, out, seed); });

  auto* ce = app.add_subcommand("counterexample", "Reproduce a failure-mode construction");
  ce->require_subcommand(1);

  double shift = 0.5, gd_step = 0.1, x0 = 1.0;
  long gd_horizon = 200;
  auto* gdb = ce->add_subcommand("gd-bias", "Constant forward shift moves the fixed point");
  gdb->add_option("--shift", shift, "Forward perturbation value")->capture_default_str();
  gdb->add_option("--step", gd_step, "Step size")->capture_default_str();
  gdb->add_option("--horizon", gd_horizon, "Iterations")->capture_default_str();
  gdb->add_option("--x0", x0, "Initial weight")->capture_default_str();
  gdb->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(gdb, seed, "Unused; accepted for interface uniformity");
  gdb->callback([&]() { code = cmd_gd_bias(shift, gd_step, gd_horizon, x0, out); });

  std::string preset = "plain";
  std::vector<double> matrix;
  double scale = 1.0, top1_step = 0.0, top1_momentum = 0.0;
  long top1_horizon = 1000;
  auto* top1c = ce->add_subcommand("top1", "Top-1 backward compression stalls a coordinate");
  top1c->add_option("--preset", preset, "plain or momentum")
      ->check(CLI::IsMember({"plain", "momentum"}))
      ->capture_default_str();
  top1c->add_option("--matrix", matrix, "Override the 2x2 first-stage matrix (row major)")
      ->expected(4);
  top1c->add_option("--scale", scale, "Initial first-stage weight value")->capture_default_str();
  auto* top1_step_opt = top1c->add_option("--step", top1_step, "Step size (preset default)");
  auto* top1_mom_opt =
      top1c->add_option("--momentum", top1_momentum, "Momentum (preset default)");
  top1c->add_option("--horizon", top1_horizon, "Iterations")->capture_default_str();
  top1c->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(top1c, seed, "Unused; accepted for interface uniformity");
  top1c->callback([&]() {
    code = cmd_top1(preset, matrix, scale, top1_step, top1_step_opt->count() > 0, top1_momentum,
                    top1_mom_opt->count() > 0, top1_horizon, out);
  });

  double point = 1.0;
  long draws = 1000000;
  auto* sigc = ce->add_subcommand("sigmoid", "Zero-mean input noise biases the sigmoid gradient");
  sigc->add_option("--point", point, "Evaluation point a")->capture_default_str();
  sigc->add_option("--draws", draws, "Monte Carlo draws")->capture_default_str();
  sigc->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(sigc, seed, "Monte Carlo seed");
  sigc->callback([&]() { code = cmd_sigmoid(point, draws, seed, out); });

  int points = 100;
  auto* gradc = app.add_subcommand("gradcheck", "Finite-difference check of the operator catalog");
  gradc->add_option("--points", points, "Random points per operator")->capture_default_str();
  gradc->add_option("--out", out, "Output directory")->capture_default_str();
  add_seed(gradc, seed, "Probe point seed");
  gradc->callback([&]() { code = cmd_gradcheck(points, seed, out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return code;
}
