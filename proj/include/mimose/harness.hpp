// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiment orchestration: two-phase execution (sheltered
// collection, then responsive planning) for the input-aware planner, the
// baseline per-iteration paths, and report emission.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "mimose/baselines.hpp"
#include "mimose/collector.hpp"
#include "mimose/estimator.hpp"
#include "mimose/model_spec.hpp"
#include "mimose/scheduler.hpp"
#include "mimose/simulator.hpp"
#include "mimose/workload.hpp"

namespace mimose {

enum class PlannerChoice { Mimose, StaticMax, Dtr, None };

inline std::string_view to_string(PlannerChoice p) {
  switch (p) {
    case PlannerChoice::Mimose: return "mimose";
    case PlannerChoice::StaticMax: return "static-max";
    case PlannerChoice::Dtr: return "dtr";
    case PlannerChoice::None: return "none";
  }
  return "unknown";
}

inline PlannerChoice planner_from_string(std::string_view s) {
  if (s == "mimose") return PlannerChoice::Mimose;
  if (s == "static-max") return PlannerChoice::StaticMax;
  if (s == "dtr") return PlannerChoice::Dtr;
  if (s == "none") return PlannerChoice::None;
  throw ParseError("unknown planner '" + std::string(s) + "'");
}

struct ExperimentConfig {
  PlannerChoice planner = PlannerChoice::Mimose;
  SchedulerConfig sched;
  CollectorConfig collector;
  NoiseModel noise;
  int estimator_order = 2;
  double dtr_eviction_cost_ms = 0.05;
};

struct IterationRow {
  std::int64_t iter = 0;
  InputSize x = 0;
  PlannerChoice planner = PlannerChoice::None;
  bool cache_hit = false;
  Bytes peak_bytes = 0;
  double iteration_ms = 0.0;
  double recompute_ms = 0.0;
  bool sheltered = false;
  int plan_size = 0;
  bool insufficient = false;
};

struct SimReport {
  std::vector<IterationRow> rows;

  PlannerChoice planner = PlannerChoice::None;
  Bytes budget_bytes = 0;
  Bytes reserve_bytes = 0;
  std::uint64_t workload_seed = 0;

  std::int64_t iterations = 0;
  double total_time_ms = 0.0;
  double plain_total_ms = 0.0;       // 3x forward time, no planner, same sizes
  double plain_iteration_ms = 0.0;   // mean of the above
  double mean_peak_bytes = 0.0;
  double recompute_total_ms = 0.0;

  std::int64_t planner_invocations = 0;
  std::int64_t collector_iterations = 0;
  std::int64_t sheltered_iterations = 0;
  std::int64_t fallback_sheltered_iterations = 0;
  std::int64_t cache_hits = 0;
  std::int64_t cache_misses = 0;
  std::int64_t distinct_sizes = 0;

  std::int64_t oom_risk_iterations = 0;
  std::int64_t insufficient_budget_iterations = 0;

  std::int64_t dtr_evictions = 0;
  double dtr_planning_ms = 0.0;

  int fit_order = -1;
  std::int64_t fit_at_iter = -1;

  // Wall-clock costs of the artifact itself (not simulated time). These are
  // real measurements and therefore not covered by seed-determinism.
  double planner_wall_ms = 0.0;
  double fit_wall_ms = 0.0;

  // Sheltered-phase surcharge over plain iterations at the same sizes.
  double collector_overhead_ms = 0.0;

  // Planner overhead (collector surcharge + estimator/scheduler wall costs)
  // in units of the mean plain iteration time. Recompute imposed by the
  // generated plans is deliberately not part of this; it shows up in
  // slowdown_vs_plain instead.
  double overhead_iterations = 0.0;

  // Total simulated time over the plain (no-planner, no-recompute) time.
  double slowdown_vs_plain = 1.0;
};

namespace detail {

inline double plain_iteration_ms(const ModelSpec& model, InputSize x) {
  double f = 0.0;
  for (const auto& l : model.layers) f += l.forward_ms(x);
  return 3.0 * f;
}

inline CheckpointPlan all_layers_plan(const ModelSpec& model, InputSize x) {
  CheckpointPlan plan;
  plan.dropped_layers.reserve(model.layers.size());
  for (const auto& l : model.layers) plan.dropped_layers.push_back(l.id);
  plan.normalize();
  plan.source_input_size = x;
  return plan;
}

}  // namespace detail

inline SimReport run_experiment(const ModelSpec& model, const WorkloadSpec& workload,
                                const ExperimentConfig& config) {
  config.sched.validate();
  workload.validate();
  if (workload.unit_min * workload.batch_multiplier < model.input_min ||
      workload.unit_max * workload.batch_multiplier > model.input_max) {
    throw Error("workload size range exceeds the model's input range");
  }

  const std::vector<InputSize> sizes = sample_workload(workload);
  const InputSize x_max = workload.unit_max * workload.batch_multiplier;

  SimReport report;
  report.planner = config.planner;
  report.budget_bytes = config.sched.budget_bytes;
  report.reserve_bytes = config.sched.effective_reserve();
  report.workload_seed = workload.seed;
  report.iterations = static_cast<std::int64_t>(sizes.size());
  report.rows.reserve(sizes.size());

  CollectorState cstate;
  cstate.noise = config.noise;
  EstimatorModel est;
  bool trained = false;
  PlanCache cache;

  CheckpointPlan static_plan;
  if (config.planner == PlannerChoice::StaticMax) {
    // A static planner pre-analyzes the model, so it plans from ground truth.
    EstimatorModel exact = exact_estimator(model);
    static_plan = static_max_plan(exact, model, x_max, config.sched);
    report.planner_invocations = 1;
  }

  DtrConfig dtr_config{config.sched.budget_bytes, config.dtr_eviction_cost_ms};

  std::set<InputSize> distinct;
  using clock = std::chrono::steady_clock;

  for (std::int64_t i = 0; i < report.iterations; ++i) {
    const InputSize x = sizes[static_cast<std::size_t>(i)];
    distinct.insert(x);

    IterationRow row;
    row.iter = i;
    row.x = x;
    row.planner = config.planner;

    switch (config.planner) {
      case PlannerChoice::None: {
        MemoryTimeline tl = simulate_iteration(model, CheckpointPlan{}, x);
        row.peak_bytes = tl.peak_bytes;
        row.iteration_ms = tl.iteration_time_ms;
        row.recompute_ms = tl.recompute_time_ms;
        break;
      }
      case PlannerChoice::StaticMax: {
        MemoryTimeline tl = simulate_iteration(model, static_plan, x);
        row.peak_bytes = tl.peak_bytes;
        row.iteration_ms = tl.iteration_time_ms;
        row.recompute_ms = tl.recompute_time_ms;
        row.plan_size = static_cast<int>(static_plan.size());
        row.insufficient = static_plan.insufficient_budget;
        break;
      }
      case PlannerChoice::Dtr: {
        DtrResult r = dtr_simulate_iteration(model, x, dtr_config);
        row.peak_bytes = r.timeline.peak_bytes;
        row.iteration_ms = r.timeline.iteration_time_ms;
        row.recompute_ms = r.timeline.recompute_time_ms;
        row.plan_size = static_cast<int>(r.state.evicted_layers.size());
        row.insufficient = r.state.oom_infeasible;
        report.dtr_evictions += r.state.evictions;
        report.dtr_planning_ms += r.state.planning_cost_ms;
        break;
      }
      case PlannerChoice::Mimose: {
        const bool unseen = cstate.seen_sizes.find(x) == cstate.seen_sizes.end();
        bool handled = false;

        if (!trained) {
          if (should_collect(cstate, x, i, config.collector)) {
            CollectResult cr = collect_iteration(model, cstate, x);
            row.sheltered = true;
            row.peak_bytes = cr.timeline.peak_bytes;
            row.iteration_ms = cr.timeline.iteration_time_ms;
            row.recompute_ms = cr.timeline.recompute_time_ms;
            row.plan_size = static_cast<int>(model.layer_count());
            handled = true;
          } else if (i < config.collector.max_sheltered_iters) {
            // Already-seen size inside the sheltered window: run the
            // conservative all-layers plan without re-collecting.
            MemoryTimeline tl = simulate_iteration(model, detail::all_layers_plan(model, x), x);
            row.sheltered = true;
            row.peak_bytes = tl.peak_bytes;
            row.iteration_ms = tl.iteration_time_ms;
            row.recompute_ms = tl.recompute_time_ms;
            row.plan_size = static_cast<int>(model.layer_count());
            handled = true;
          } else if (unseen && cstate.distinct_sizes() < config.estimator_order + 1) {
            // Not enough distinct sizes to fit yet: keep collecting.
            CollectResult cr = collect_iteration(model, cstate, x);
            row.sheltered = true;
            row.peak_bytes = cr.timeline.peak_bytes;
            row.iteration_ms = cr.timeline.iteration_time_ms;
            row.recompute_ms = cr.timeline.recompute_time_ms;
            row.plan_size = static_cast<int>(model.layer_count());
            report.fallback_sheltered_iterations += 1;
            handled = true;
          } else {
            // Train on whatever the collector gathered. A workload with fewer
            // distinct sizes than order+1 gets a reduced-order fit, which is
            // exact at every size seen so far.
            const int order = std::min(config.estimator_order, cstate.distinct_sizes() - 1);
            const auto t0 = clock::now();
            est = fit(cstate.samples, order);
            report.fit_wall_ms +=
                std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            trained = true;
            report.fit_order = order;
            report.fit_at_iter = i;
          }
        }

        if (!handled && trained) {
          if (config.collector.collect_new_sizes_always && unseen) {
            CollectResult cr = collect_iteration(model, cstate, x);
            row.sheltered = true;
            row.peak_bytes = cr.timeline.peak_bytes;
            row.iteration_ms = cr.timeline.iteration_time_ms;
            row.recompute_ms = cr.timeline.recompute_time_ms;
            row.plan_size = static_cast<int>(model.layer_count());
            const int order = std::min(config.estimator_order, cstate.distinct_sizes() - 1);
            const auto t0 = clock::now();
            est = fit(cstate.samples, order);
            report.fit_wall_ms +=
                std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            report.fit_order = order;
          } else {
            const auto t0 = clock::now();
            auto [plan, hit] = lookup_or_plan(cache, est, model, x, config.sched);
            report.planner_wall_ms +=
                std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            if (!hit) {
              cache.entries[x].generated_at_iter = i;
              plan.generated_at_iter = i;
            }
            MemoryTimeline tl = simulate_iteration(model, plan, x);
            row.cache_hit = hit;
            row.peak_bytes = tl.peak_bytes;
            row.iteration_ms = tl.iteration_time_ms;
            row.recompute_ms = tl.recompute_time_ms;
            row.plan_size = static_cast<int>(plan.size());
            row.insufficient = plan.insufficient_budget;
          }
        }
        break;
      }
    }

    const double plain_ms = detail::plain_iteration_ms(model, x);
    if (row.sheltered) {
      report.sheltered_iterations += 1;
      report.collector_overhead_ms += row.iteration_ms - plain_ms;
    }
    if (row.peak_bytes > config.sched.budget_bytes) report.oom_risk_iterations += 1;
    if (row.insufficient) report.insufficient_budget_iterations += 1;
    report.total_time_ms += row.iteration_ms;
    report.recompute_total_ms += row.recompute_ms;
    report.plain_total_ms += plain_ms;
    report.mean_peak_bytes += static_cast<double>(row.peak_bytes);
    report.rows.push_back(row);
  }

  report.collector_iterations = cstate.collected_iterations;
  report.cache_hits = cache.hits;
  report.cache_misses = cache.misses;
  report.planner_invocations += cache.misses;
  report.distinct_sizes = static_cast<std::int64_t>(distinct.size());
  if (report.iterations > 0) {
    report.mean_peak_bytes /= static_cast<double>(report.iterations);
    report.plain_iteration_ms = report.plain_total_ms / static_cast<double>(report.iterations);
    if (report.plain_iteration_ms > 0.0) {
      report.overhead_iterations =
          (report.collector_overhead_ms + report.planner_wall_ms + report.fit_wall_ms) /
          report.plain_iteration_ms;
      report.slowdown_vs_plain = report.total_time_ms / report.plain_total_ms;
    }
  }
  return report;
}

enum class ReportFormat { Csv, Summary };

inline ReportFormat report_format_from_string(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "summary") return ReportFormat::Summary;
  throw ParseError("unknown report format '" + std::string(s) + "'");
}

inline void write_report_csv(const SimReport& report, std::ostream& out) {
  out << "iter,x,planner,cache_hit,peak_bytes,iteration_ms,recompute_ms,sheltered,plan_size,"
         "insufficient\n";
  for (const auto& r : report.rows) {
    out << r.iter << ',' << r.x << ',' << to_string(r.planner) << ',' << (r.cache_hit ? 1 : 0)
        << ',' << r.peak_bytes << ',' << detail::format_double(r.iteration_ms) << ','
        << detail::format_double(r.recompute_ms) << ',' << (r.sheltered ? 1 : 0) << ','
        << r.plan_size << ',' << (r.insufficient ? 1 : 0) << '\n';
  }
}

inline void write_report_summary(const SimReport& report, std::ostream& out) {
  out << "planner: " << to_string(report.planner) << '\n';
  out << "iterations: " << report.iterations << '\n';
  out << "workload_seed: " << report.workload_seed << '\n';
  out << "budget_bytes: " << report.budget_bytes << '\n';
  out << "reserve_bytes: " << report.reserve_bytes << '\n';
  out << "total_time_ms: " << detail::format_double(report.total_time_ms) << '\n';
  out << "plain_total_ms: " << detail::format_double(report.plain_total_ms) << '\n';
  out << "plain_iteration_ms: " << detail::format_double(report.plain_iteration_ms) << '\n';
  out << "mean_peak_bytes: " << detail::format_double(report.mean_peak_bytes) << '\n';
  out << "recompute_total_ms: " << detail::format_double(report.recompute_total_ms) << '\n';
  out << "planner_invocations: " << report.planner_invocations << '\n';
  out << "collector_iterations: " << report.collector_iterations << '\n';
  out << "sheltered_iterations: " << report.sheltered_iterations << '\n';
  out << "fallback_sheltered_iterations: " << report.fallback_sheltered_iterations << '\n';
  out << "cache_hits: " << report.cache_hits << '\n';
  out << "cache_misses: " << report.cache_misses << '\n';
  out << "distinct_sizes: " << report.distinct_sizes << '\n';
  out << "oom_risk_iterations: " << report.oom_risk_iterations << '\n';
  out << "insufficient_budget_iterations: " << report.insufficient_budget_iterations << '\n';
  out << "dtr_evictions: " << report.dtr_evictions << '\n';
  out << "dtr_planning_ms: " << detail::format_double(report.dtr_planning_ms) << '\n';
  out << "fit_order: " << report.fit_order << '\n';
  out << "fit_at_iter: " << report.fit_at_iter << '\n';
  out << "collector_overhead_ms: " << detail::format_double(report.collector_overhead_ms) << '\n';
  out << "overhead_iterations: " << detail::format_double(report.overhead_iterations) << '\n';
  out << "slowdown_vs_plain: " << detail::format_double(report.slowdown_vs_plain) << '\n';
  out << "planner_wall_ms: " << detail::format_double(report.planner_wall_ms) << '\n';
  out << "fit_wall_ms: " << detail::format_double(report.fit_wall_ms) << '\n';
}

inline void emit_report(const SimReport& report, ReportFormat format,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write report file: " + path.string());
  if (format == ReportFormat::Csv) {
    write_report_csv(report, out);
  } else {
    write_report_summary(report, out);
  }
  if (!out) throw Error("failed while writing report file: " + path.string());
}

}  // namespace mimose
