// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: single-iteration simulation, plan generation,
// collector+estimator fitting, full experiment runs, planner/budget grids,
// and workload generation.

#include <CLI11.hpp>

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mimose/mimose.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;

// Accepts plain byte counts or k/m/g/t suffixes (powers of 1024, optional
// trailing 'b'), e.g. "6g", "512m", "1.5g", "123456".
mimose::Bytes parse_bytes(const std::string& text) {
  if (text.empty()) throw mimose::ParseError("empty byte quantity");
  std::size_t idx = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &idx);
  } catch (const std::exception&) {
    throw mimose::ParseError("bad byte quantity: '" + text + "'");
  }
  std::string suffix = text.substr(idx);
  for (auto& c : suffix) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (!suffix.empty() && suffix.back() == 'b') suffix.pop_back();
  double mult = 1.0;
  if (suffix == "k" || suffix == "ki") mult = 1024.0;
  else if (suffix == "m" || suffix == "mi") mult = 1024.0 * 1024.0;
  else if (suffix == "g" || suffix == "gi") mult = 1024.0 * 1024.0 * 1024.0;
  else if (suffix == "t" || suffix == "ti") mult = 1024.0 * 1024.0 * 1024.0 * 1024.0;
  else if (!suffix.empty()) throw mimose::ParseError("bad byte suffix: '" + text + "'");
  return mimose::round_bytes(value * mult);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct CommonOpts {
  std::string model_path;
  std::string budget = "0";
  std::string reserve;
  std::string planner = "mimose";
  std::uint64_t seed = 1;
  std::int64_t iters = 2000;
  std::string dist = "uniform:30:332";
  std::int64_t batch_multiplier = 32;
  std::string out_path;
  std::string format = "csv";
  bool excess_includes_constant = true;
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
  int sheltered_iters = 10;
  bool collect_new_sizes = false;
  double bucket_tol = 0.10;
  double cache_tol = 0.0;
  double dtr_eviction_cost = 0.05;
  int order = 2;
};

void add_workload_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--seed", o.seed, "workload RNG seed");
  cmd->add_option("--iters", o.iters, "iteration count");
  cmd->add_option("--dist", o.dist,
                  "size distribution: uniform:LO:HI | normal:MU:SIGMA:LO:HI | powerlaw:ALPHA:LO:HI "
                  "(values in size units)");
  cmd->add_option("--batch-multiplier", o.batch_multiplier, "elements per size unit");
}

void add_scheduler_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--budget", o.budget, "memory budget (bytes, k/m/g suffixes allowed)");
  cmd->add_option("--reserve", o.reserve, "reserve subtracted from the budget (default 8%)");
  cmd->add_option("--bucket-tol", o.bucket_tol, "relative bucket width");
  cmd->add_option("--cache-tol", o.cache_tol, "relative cache tolerance for plan reuse");
  cmd->add_option("--excess-includes-constant", o.excess_includes_constant,
                  "include the constant footprint in the excess computation");
}

mimose::SchedulerConfig scheduler_config(const CommonOpts& o) {
  mimose::SchedulerConfig cfg;
  cfg.budget_bytes = parse_bytes(o.budget);
  cfg.reserve_bytes = o.reserve.empty() ? -1 : parse_bytes(o.reserve);
  cfg.bucket_tolerance = o.bucket_tol;
  cfg.cache_tolerance = o.cache_tol;
  cfg.excess_includes_constant = o.excess_includes_constant;
  return cfg;
}

mimose::WorkloadSpec workload_spec(const CommonOpts& o) {
  mimose::WorkloadSpec spec = mimose::parse_distribution(o.dist);
  spec.batch_multiplier = o.batch_multiplier;
  spec.iterations = o.iters;
  spec.seed = o.seed;
  return spec;
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path);
  if (!file) throw mimose::Error("cannot write output file: " + path);
  return file;
}

int report_exit_code(const mimose::SimReport& report) {
  if (report.oom_risk_iterations > 0 || report.insufficient_budget_iterations > 0) {
    return kExitInfeasible;
  }
  return kExitOk;
}

int cmd_simulate(const CommonOpts& o, const std::string& drop_list, mimose::InputSize x) {
  auto model = mimose::load_model(o.model_path);
  mimose::CheckpointPlan plan;
  for (const auto& tok : split_list(drop_list)) {
    plan.dropped_layers.push_back(static_cast<int>(std::stol(tok)));
  }
  plan.normalize();
  plan.source_input_size = x;
  auto tl = mimose::simulate_iteration(model, plan, x);
  std::ofstream file;
  auto& out = open_out(file, o.out_path);
  mimose::write_timeline_csv(tl, out);
  std::cerr << "peak_bytes: " << tl.peak_bytes << "\n"
            << "iteration_ms: " << tl.iteration_time_ms << "\n";
  return kExitOk;
}

int cmd_plan(const CommonOpts& o, const std::string& estimator_path, mimose::InputSize x) {
  auto model = mimose::load_model(o.model_path);
  mimose::EstimatorModel est = estimator_path.empty() ? mimose::exact_estimator(model)
                                                      : mimose::load_estimator(estimator_path);
  auto cfg = scheduler_config(o);
  auto plan = mimose::generate_plan(est, model, x, cfg);
  std::ofstream file;
  auto& out = open_out(file, o.out_path);
  mimose::write_plan(plan, out);
  return plan.insufficient_budget ? kExitInfeasible : kExitOk;
}

int cmd_fit(const CommonOpts& o, const std::string& dump_path, const std::string& samples_path) {
  auto model = mimose::load_model(o.model_path);
  auto spec = workload_spec(o);
  auto sizes = mimose::sample_workload(spec);

  mimose::CollectorState state;
  state.noise = {o.noise, o.noise_seed};
  for (mimose::InputSize x : sizes) {
    if (state.seen_sizes.find(x) == state.seen_sizes.end()) {
      mimose::collect_iteration(model, state, x);
    }
  }
  if (!samples_path.empty()) {
    std::ofstream samples_out(samples_path);
    if (!samples_out) throw mimose::Error("cannot write samples file: " + samples_path);
    mimose::write_samples_csv(state.samples, samples_out);
  }
  auto est = mimose::fit(state.samples, o.order);
  if (!dump_path.empty()) {
    mimose::dump_estimator(est, dump_path);
  } else {
    std::cout << mimose::estimator_to_string(est);
  }
  std::cerr << "collected_iterations: " << state.collected_iterations << "\n"
            << "distinct_sizes: " << state.distinct_sizes() << "\n";
  return kExitOk;
}

mimose::ExperimentConfig experiment_config(const CommonOpts& o) {
  mimose::ExperimentConfig cfg;
  cfg.planner = mimose::planner_from_string(o.planner);
  cfg.sched = scheduler_config(o);
  cfg.collector.max_sheltered_iters = o.sheltered_iters;
  cfg.collector.collect_new_sizes_always = o.collect_new_sizes;
  cfg.noise = {o.noise, o.noise_seed};
  cfg.estimator_order = o.order;
  cfg.dtr_eviction_cost_ms = o.dtr_eviction_cost;
  return cfg;
}

int cmd_run(const CommonOpts& o) {
  auto model = mimose::load_model(o.model_path);
  auto report = mimose::run_experiment(model, workload_spec(o), experiment_config(o));
  auto format = mimose::report_format_from_string(o.format);
  if (o.out_path.empty()) {
    if (format == mimose::ReportFormat::Csv) {
      mimose::write_report_csv(report, std::cout);
    } else {
      mimose::write_report_summary(report, std::cout);
    }
  } else {
    mimose::emit_report(report, format, o.out_path);
  }
  return report_exit_code(report);
}

int cmd_compare(const CommonOpts& o, const std::string& budgets, const std::string& planners) {
  auto model = mimose::load_model(o.model_path);
  std::ofstream file;
  auto& out = open_out(file, o.out_path);
  out << "planner,budget_bytes,total_time_ms,mean_peak_bytes,recompute_total_ms,"
         "planner_invocations,collector_iterations,cache_hits,oom_risk_iterations,"
         "insufficient_budget_iterations,overhead_iterations\n";
  int exit_code = kExitOk;
  for (const auto& budget : split_list(budgets)) {
    for (const auto& planner : split_list(planners)) {
      CommonOpts local = o;
      local.budget = budget;
      local.planner = planner;
      auto report = mimose::run_experiment(model, workload_spec(local), experiment_config(local));
      out << planner << ',' << report.budget_bytes << ','
          << mimose::detail::format_double(report.total_time_ms) << ','
          << mimose::detail::format_double(report.mean_peak_bytes) << ','
          << mimose::detail::format_double(report.recompute_total_ms) << ','
          << report.planner_invocations << ',' << report.collector_iterations << ','
          << report.cache_hits << ',' << report.oom_risk_iterations << ','
          << report.insufficient_budget_iterations << ','
          << mimose::detail::format_double(report.overhead_iterations) << '\n';
      exit_code = std::max(exit_code, report_exit_code(report));
    }
  }
  return exit_code;
}

int cmd_gen_workload(const CommonOpts& o) {
  auto sizes = mimose::sample_workload(workload_spec(o));
  std::ofstream file;
  auto& out = open_out(file, o.out_path);
  for (auto x : sizes) out << x << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"input-aware checkpointing planner on a deterministic training-memory simulator"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string drop_list;
  std::string estimator_path;
  std::string dump_path;
  std::string samples_path;
  std::string budgets;
  std::string planners = "mimose,static-max,dtr,none";
  mimose::InputSize x = 0;

  auto* simulate = app.add_subcommand("simulate", "simulate one iteration and print the timeline");
  simulate->add_option("--model", opts.model_path)->required();
  simulate->add_option("--x", x, "input size in elements")->required();
  simulate->add_option("--drop", drop_list, "comma-separated layer ids to checkpoint");
  simulate->add_option("--out", opts.out_path);

  auto* plan = app.add_subcommand("plan", "generate one checkpointing plan");
  plan->add_option("--model", opts.model_path)->required();
  plan->add_option("--x", x, "input size in elements")->required();
  plan->add_option("--load-estimator", estimator_path,
                   "use a dumped estimator instead of ground truth");
  plan->add_option("--out", opts.out_path);
  add_scheduler_flags(plan, opts);

  auto* fit = app.add_subcommand("fit", "collect samples and fit the estimator");
  fit->add_option("--model", opts.model_path)->required();
  fit->add_option("--dump-estimator", dump_path, "write the fitted estimator here");
  fit->add_option("--dump-samples", samples_path, "write the collected samples as CSV");
  fit->add_option("--noise", opts.noise, "relative measurement noise");
  fit->add_option("--noise-seed", opts.noise_seed);
  fit->add_option("--order", opts.order, "polynomial order");
  add_workload_flags(fit, opts);

  auto* run = app.add_subcommand("run", "run a full experiment");
  run->add_option("--model", opts.model_path)->required();
  run->add_option("--planner", opts.planner, "mimose | static-max | dtr | none");
  run->add_option("--out", opts.out_path);
  run->add_option("--format", opts.format, "csv | summary");
  run->add_option("--noise", opts.noise);
  run->add_option("--noise-seed", opts.noise_seed);
  run->add_option("--sheltered-iters", opts.sheltered_iters);
  run->add_flag("--collect-new-sizes", opts.collect_new_sizes,
                "collect whenever an unseen size appears");
  run->add_option("--dtr-eviction-cost", opts.dtr_eviction_cost, "ms per eviction decision");
  run->add_option("--order", opts.order);
  add_scheduler_flags(run, opts);
  add_workload_flags(run, opts);

  auto* compare = app.add_subcommand("compare", "grid over planners and budgets");
  compare->add_option("--model", opts.model_path)->required();
  compare->add_option("--budgets", budgets, "comma-separated budget list")->required();
  compare->add_option("--planners", planners, "comma-separated planner list");
  compare->add_option("--out", opts.out_path);
  compare->add_option("--noise", opts.noise);
  compare->add_option("--noise-seed", opts.noise_seed);
  compare->add_option("--sheltered-iters", opts.sheltered_iters);
  compare->add_option("--dtr-eviction-cost", opts.dtr_eviction_cost);
  add_scheduler_flags(compare, opts);
  add_workload_flags(compare, opts);

  auto* gen = app.add_subcommand("gen-workload", "print a seeded input-size sequence");
  gen->add_option("--out", opts.out_path);
  add_workload_flags(gen, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opts, drop_list, x);
    if (plan->parsed()) return cmd_plan(opts, estimator_path, x);
    if (fit->parsed()) return cmd_fit(opts, dump_path, samples_path);
    if (run->parsed()) return cmd_run(opts);
    if (compare->parsed()) return cmd_compare(opts, budgets, planners);
    if (gen->parsed()) return cmd_gen_workload(opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
