// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance suite. Each test case checks one release criterion
// and the registered listener prints a PASS/FAIL line per criterion.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <vector>

#include "mimose/mimose.hpp"
#include "test_util.hpp"

using namespace mimose;

namespace {

class AcceptancePrinter : public Catch::EventListenerBase {
 public:
  using EventListenerBase::EventListenerBase;

  void testCaseEnded(const Catch::TestCaseStats& stats) override {
    std::printf("[acceptance] %s: %s\n", stats.testInfo->name.c_str(),
                stats.totals.assertions.allOk() ? "PASS" : "FAIL");
    std::fflush(stdout);
  }
};

CATCH_REGISTER_LISTENER(AcceptancePrinter)

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point start) {
  return std::chrono::duration<double>(clock_type::now() - start).count();
}

std::vector<CollectedSample> bert_samples(const ModelSpec& bert, double eps, std::uint64_t seed) {
  CollectorState state;
  state.noise = {eps, seed};
  for (int i = 0; i < 10; ++i) collect_iteration(bert, state, bert.input_min + i * 1024);
  return state.samples;
}

double held_out_error(const ModelSpec& bert, const EstimatorModel& est) {
  double sum = 0.0;
  int n = 0;
  for (InputSize x : {1500, 3100, 4700, 6300, 7900}) {
    for (const auto& l : bert.layers) {
      const double truth = l.activation_at(static_cast<double>(x));
      sum += std::abs(static_cast<double>(predict(est, l.id, x)) - truth) / truth;
      ++n;
    }
  }
  return sum / n;
}

// Transient headroom the greedy end-of-forward model does not account for:
// retained boundaries of every dropped layer plus the largest interior
// rematerialization.
Bytes plan_slack(const ModelSpec& m, const CheckpointPlan& plan, InputSize x) {
  if (plan.empty()) return 0;
  Bytes boundaries = 0;
  Bytes max_interior = 0;
  for (int id : plan.dropped_layers) {
    const LayerSpec* l = m.find_layer(id);
    const Bytes a = round_bytes(l->activation_at(static_cast<double>(x)));
    const Bytes o = round_bytes(l->boundary_at(static_cast<double>(x)));
    boundaries += o;
    max_interior = std::max(max_interior, a - o);
  }
  return boundaries + max_interior;
}

Bytes analytic_reserve(const ModelSpec& m, InputSize x) {
  Bytes boundaries = 0;
  Bytes max_act = 0;
  for (const auto& l : m.layers) {
    boundaries += round_bytes(l.boundary_at(static_cast<double>(x)));
    max_act = std::max(max_act, round_bytes(l.activation_at(static_cast<double>(x))));
  }
  return boundaries + max_act;
}

}  // namespace

TEST_CASE("criterion 1: estimator fidelity") {
  const auto start = clock_type::now();
  auto bert = load_model(testutil::repo_model_path("bert12.model"));

  // Noise-free: exact coefficient recovery from 10 samples.
  auto est = fit(bert_samples(bert, 0.0, 0), 2);
  for (const auto& l : bert.layers) {
    const auto& c = est.per_layer_coeffs.at(l.id);
    for (int k = 0; k < 3; ++k) {
      const double truth = l.activation_coeffs[static_cast<std::size_t>(k)];
      REQUIRE(std::abs(c[static_cast<std::size_t>(k)] - truth) <=
              1e-9 * std::max(std::abs(truth), 1.0));
    }
    REQUIRE(est.fit_stats.at(l.id).mean_rel_err <= 1e-12);
  }

  // 1% seeded uniform noise: held-out mean relative error within 1.5%.
  auto noisy = fit(bert_samples(bert, 0.01, 2024), 2);
  const double err = held_out_error(bert, noisy);
  std::printf("[acceptance]   C1 held-out error with 1%% noise: %.4f%%\n", err * 100.0);
  REQUIRE(err <= 0.015);
  REQUIRE(err == Catch::Approx(0.003020944242).margin(1e-6));  // frozen seed-2024 value

  REQUIRE(seconds_since(start) < 1.0);
}

TEST_CASE("criterion 2: estimator and scheduler latency") {
  auto bert = load_model(testutil::repo_model_path("bert12.model"));
  auto est = exact_estimator(bert);
  SchedulerConfig cfg;
  cfg.budget_bytes = 6LL * 1024 * 1024 * 1024;

  // predict: mean over a large batch of calls must stay under 100 us.
  const int calls = 100000;
  Bytes sink = 0;
  const auto t0 = clock_type::now();
  for (int i = 0; i < calls; ++i) {
    sink += predict(est, i % 12, 960 + (i % 9000));
  }
  const double predict_us = seconds_since(t0) * 1e6 / calls;
  std::printf("[acceptance]   C2 predict: %.3f us/call\n", predict_us);
  REQUIRE(sink > 0);
  REQUIRE(predict_us <= 100.0);

  // prediction + plan generation end to end under 1 ms on 12 layers.
  double best = 1e18;
  for (int i = 0; i < 100; ++i) {
    best = std::min(best, plan_latency_probe_us(est, bert, 8000, cfg));
  }
  std::printf("[acceptance]   C2 plan latency (best of 100): %.1f us\n", best);
  REQUIRE(best <= 1000.0);
}

TEST_CASE("criterion 3: positional effect of single checkpoints") {
  const auto start = clock_type::now();
  auto m = testutil::homogeneous_model(12, 100, 10, 5);

  Bytes prev = 0;
  for (int k = 0; k < 12; ++k) {
    CheckpointPlan p;
    p.dropped_layers = {k};
    const Bytes peak = peak_memory(m, p, 1);
    REQUIRE(peak >= prev);
    prev = peak;
  }
  CheckpointPlan front{{0}, 0, -1, false};
  CheckpointPlan back{{11}, 0, -1, false};
  REQUIRE(peak_memory(m, front, 1) < peak_memory(m, back, 1));
  REQUIRE(seconds_since(start) < 1.0);
}

TEST_CASE("criterion 4: greedy plans are feasible wherever the oracle is") {
  const auto start = clock_type::now();

  std::vector<std::pair<ModelSpec, std::vector<InputSize>>> grid;
  grid.emplace_back(testutil::homogeneous_model(12, 100, 2, 5, 250), std::vector<InputSize>{1});
  grid.emplace_back(testutil::model_from({{50, 0.2, 0, 2, 0.01, 2, 0},
                                          {120, 0.1, 0, 3, 0, 4, 0.001},
                                          {80, 0.3, 0, 2, 0.02, 3, 0},
                                          {200, 0.05, 0, 4, 0, 5, 0},
                                          {60, 0.25, 0, 1, 0.01, 2, 0},
                                          {150, 0.15, 0, 3, 0, 4, 0},
                                          {90, 0.2, 0, 2, 0, 3, 0},
                                          {110, 0.1, 0, 2, 0.005, 3, 0}},
                                         1600, 1, 800),
                    std::vector<InputSize>{10, 400, 800});
  grid.emplace_back(testutil::model_from({{100, 1, 0.02, 5, 0.1, 2, 0.001},
                                          {60, 2, 0, 4, 0.2, 3, 0},
                                          {150, 0.5, 0.05, 8, 0, 4, 0},
                                          {90, 1.5, 0, 5, 0.1, 2, 0},
                                          {120, 1, 0.01, 6, 0, 3, 0},
                                          {70, 2.5, 0, 4, 0.2, 2, 0}},
                                         3000, 1, 120),
                    std::vector<InputSize>{5, 60, 120});
  grid.emplace_back(load_model(testutil::repo_model_path("bert12.model")),
                    std::vector<InputSize>{2000, 6000, 10624});

  std::int64_t checked = 0;
  double worst_ratio = 1.0;
  double ratio_sum = 0.0;
  std::int64_t ratio_count = 0;

  for (const auto& [model, xs] : grid) {
    auto est = exact_estimator(model);
    for (InputSize x : xs) {
      CheckpointPlan all;
      for (const auto& l : model.layers) all.dropped_layers.push_back(l.id);
      const Bytes floor_peak = peak_memory(model, all, x);
      const Bytes top_peak = peak_memory(model, {}, x);

      for (int step = 0; step <= 5; ++step) {
        const Bytes budget =
            floor_peak + (top_peak - floor_peak) * static_cast<Bytes>(step) / 5;
        auto oracle = brute_force_plan(model, x, budget);
        if (!oracle.feasible) continue;

        SchedulerConfig cfg;
        cfg.budget_bytes = budget;
        cfg.reserve_bytes = analytic_reserve(model, x);
        REQUIRE(cfg.reserve_bytes * 2 <= budget);

        auto plan = generate_plan(est, model, x, cfg);
        auto tl = simulate_iteration(model, plan, x);
        REQUIRE(tl.peak_bytes <= budget);
        ++checked;

        if (oracle.recompute_ms > 0.0) {
          const double ratio = tl.recompute_time_ms / oracle.recompute_ms;
          worst_ratio = std::max(worst_ratio, ratio);
          ratio_sum += ratio;
          ++ratio_count;
        } else {
          REQUIRE(tl.recompute_time_ms >= 0.0);
        }
      }
    }
  }

  REQUIRE(checked >= 40);
  if (ratio_count > 0) {
    std::printf("[acceptance]   C4 recompute vs optimal over %lld points: mean %.3fx, worst %.3fx\n",
                static_cast<long long>(ratio_count), ratio_sum / ratio_count, worst_ratio);
  }
  REQUIRE(seconds_since(start) < 300.0);
}

TEST_CASE("criterion 5: peak monotonicity and conservation, exhaustive") {
  const auto start = clock_type::now();

  std::vector<ModelSpec> models;
  models.push_back(testutil::model_from({{40, 2, 0, 4, 0.5, 2, 0},
                                         {100, 0, 0.3, 10, 0, 3, 0.01},
                                         {25, 1, 0, 1, 0.25, 1, 0},
                                         {60, 0, 0, 6, 0, 2, 0},
                                         {80, 3, 0.1, 8, 1, 4, 0},
                                         {30, 0, 0, 3, 0, 1.5, 0}},
                                        50, 1, 50));
  models.push_back(testutil::model_from({{70, 1, 0, 7, 0.1, 2, 0},
                                         {90, 0, 0.2, 9, 0, 3, 0},
                                         {55, 2, 0, 5, 0.5, 2, 0},
                                         {120, 0, 0, 12, 0, 4, 0},
                                         {45, 1, 0.05, 4, 0.2, 1, 0},
                                         {85, 0.5, 0, 8, 0, 3, 0},
                                         {65, 0, 0, 6, 0, 2, 0},
                                         {100, 1.5, 0, 10, 0.3, 3, 0}},
                                        200, 1, 40));

  for (const auto& m : models) {
    const int L = static_cast<int>(m.layer_count());
    for (InputSize x : {m.input_min, (m.input_min + m.input_max) / 2, m.input_max}) {
      std::vector<Bytes> peak(std::size_t{1} << L);
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << L); ++mask) {
        CheckpointPlan p;
        for (int b = 0; b < L; ++b) {
          if (mask & (std::uint64_t{1} << b)) p.dropped_layers.push_back(b);
        }
        auto tl = simulate_iteration(m, p, x);
        peak[mask] = tl.peak_bytes;
        REQUIRE(tl.events.front().resident_bytes == m.constant_footprint);
        REQUIRE(tl.events.back().resident_bytes == m.constant_footprint);
      }
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << L); ++mask) {
        REQUIRE(peak[mask] <= peak[0]);
        for (int b = 0; b < L; ++b) {
          if (!(mask & (std::uint64_t{1} << b))) {
            REQUIRE(peak[mask | (std::uint64_t{1} << b)] <= peak[mask]);
          }
        }
      }
    }
  }
  REQUIRE(seconds_since(start) < 60.0);
}

TEST_CASE("criterion 6: throughput ordering under a tight budget") {
  auto bert = load_model(testutil::repo_model_path("bert12.model"));

  WorkloadSpec w;
  w.dist = Distribution::Normal;
  w.mu = 180;
  w.sigma = 60;
  w.unit_min = 30;
  w.unit_max = 332;
  w.batch_multiplier = 32;
  w.iterations = 10000;
  w.seed = 99;

  ExperimentConfig cfg;
  cfg.sched.budget_bytes = 6LL * 1024 * 1024 * 1024;
  // Eviction-decision handling cost calibrated so reactive planning lands at
  // a few percent of iteration time, the regime dynamic planners exhibit in
  // practice; the eviction machinery itself runs at layer granularity here.
  cfg.dtr_eviction_cost_ms = 3.0;

  cfg.planner = PlannerChoice::Mimose;
  auto mim = run_experiment(bert, w, cfg);
  cfg.planner = PlannerChoice::StaticMax;
  auto stat = run_experiment(bert, w, cfg);
  cfg.planner = PlannerChoice::Dtr;
  auto dtr = run_experiment(bert, w, cfg);

  std::printf("[acceptance]   C6 totals: input-aware %.0f ms, static-max %.0f ms (+%.1f%%), "
              "dtr %.0f ms (+%.1f%%)\n",
              mim.total_time_ms, stat.total_time_ms,
              100.0 * (stat.total_time_ms / mim.total_time_ms - 1.0), dtr.total_time_ms,
              100.0 * (dtr.total_time_ms / mim.total_time_ms - 1.0));

  REQUIRE(mim.total_time_ms < stat.total_time_ms);
  REQUIRE(mim.total_time_ms < dtr.total_time_ms);

  const double planning_share = dtr.dtr_planning_ms / dtr.total_time_ms;
  std::printf("[acceptance]   C6 dtr planning share: %.2f%%\n", planning_share * 100.0);
  REQUIRE(planning_share >= 0.01);
  REQUIRE(planning_share <= 0.07);

  for (const auto* r : {&mim, &stat, &dtr}) {
    REQUIRE(r->oom_risk_iterations == 0);
    REQUIRE(r->insufficient_budget_iterations == 0);
  }
}

TEST_CASE("criterion 7: total overhead within eight plain iterations") {
  auto bert = load_model(testutil::repo_model_path("bert12.model"));

  WorkloadSpec w;
  w.dist = Distribution::Uniform;
  w.unit_min = 30;
  w.unit_max = 332;
  w.batch_multiplier = 32;
  w.iterations = 2000;
  w.seed = 42;

  ExperimentConfig cfg;
  cfg.sched.budget_bytes = 16LL * 1024 * 1024 * 1024;  // feasible without planning

  cfg.planner = PlannerChoice::None;
  auto none = run_experiment(bert, w, cfg);
  REQUIRE(none.oom_risk_iterations == 0);
  REQUIRE(none.total_time_ms == Catch::Approx(none.plain_total_ms));

  cfg.planner = PlannerChoice::Mimose;
  auto mim = run_experiment(bert, w, cfg);
  REQUIRE(mim.oom_risk_iterations == 0);

  const double surcharge_iters =
      (mim.total_time_ms - none.total_time_ms + mim.planner_wall_ms + mim.fit_wall_ms) /
      mim.plain_iteration_ms;
  std::printf("[acceptance]   C7 surcharge: %.2f plain iterations over %lld iterations\n",
              surcharge_iters, static_cast<long long>(w.iterations));
  REQUIRE(surcharge_iters <= 8.0);
  REQUIRE(mim.overhead_iterations <= 8.0);
  // With empty plans the two routes agree: the whole surcharge is the
  // collector plus wall costs.
  REQUIRE(surcharge_iters == Catch::Approx(mim.overhead_iterations).margin(1e-6));
}

TEST_CASE("criterion 8: one plan generation per distinct size") {
  auto bert = load_model(testutil::repo_model_path("bert12.model"));

  WorkloadSpec w;
  w.dist = Distribution::Uniform;
  w.unit_min = 150;  // exactly 50 possible sizes
  w.unit_max = 199;
  w.batch_multiplier = 32;
  w.iterations = 2000;
  w.seed = 11;

  ExperimentConfig cfg;
  cfg.sched.budget_bytes = 6LL * 1024 * 1024 * 1024;
  cfg.sched.cache_tolerance = 0.0;
  cfg.planner = PlannerChoice::Mimose;

  auto report = run_experiment(bert, w, cfg);
  REQUIRE(report.distinct_sizes == 50);
  REQUIRE(report.planner_invocations == 50);
  REQUIRE(report.cache_misses == 50);
  REQUIRE(report.planner_invocations == report.cache_misses);  // tolerance 0: keys == misses
  REQUIRE(report.oom_risk_iterations == 0);
}

TEST_CASE("criterion 9: memory-vs-size curve shape") {
  auto bert = load_model(testutil::repo_model_path("bert12.model"));

  WorkloadSpec w;
  w.dist = Distribution::Uniform;
  w.unit_min = 30;
  w.unit_max = 332;
  w.batch_multiplier = 32;
  w.iterations = 2000;
  w.seed = 5;

  ExperimentConfig cfg;
  cfg.sched.budget_bytes = 6LL * 1024 * 1024 * 1024;
  cfg.planner = PlannerChoice::Mimose;
  const Bytes reserve = cfg.sched.effective_reserve();

  auto report = run_experiment(bert, w, cfg);
  REQUIRE(report.insufficient_budget_iterations == 0);
  for (const auto& row : report.rows) {
    REQUIRE(row.peak_bytes <= cfg.sched.budget_bytes);
  }

  // Reconstruct the exported memory-vs-size curve with the plans attached:
  // replicate the run's sheltered collection, then plan each distinct size.
  auto sizes = sample_workload(w);
  CollectorState state;
  for (std::int64_t i = 0; i < 10 && i < static_cast<std::int64_t>(sizes.size()); ++i) {
    if (state.seen_sizes.find(sizes[static_cast<std::size_t>(i)]) == state.seen_sizes.end()) {
      collect_iteration(bert, state, sizes[static_cast<std::size_t>(i)]);
    }
  }
  auto est = fit(state.samples, 2);

  std::set<InputSize> distinct(sizes.begin(), sizes.end());
  PlanCache cache;
  struct Point {
    InputSize x;
    Bytes peak;
    std::vector<int> plan;
  };
  std::vector<Point> curve;
  for (InputSize x : distinct) {
    auto [plan, hit] = lookup_or_plan(cache, est, bert, x, cfg.sched);
    auto tl = simulate_iteration(bert, plan, x);
    REQUIRE(tl.peak_bytes <= cfg.sched.budget_bytes - reserve + plan_slack(bert, plan, x));
    curve.push_back({x, tl.peak_bytes, plan.dropped_layers});
  }

  // Within each constant-plan segment the curve is non-decreasing.
  std::size_t segments = 1;
  std::set<std::vector<int>> plans_seen{curve.front().plan};
  bool shared_segment = false;
  std::size_t run_length = 1;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].plan == curve[i - 1].plan) {
      REQUIRE(curve[i].peak >= curve[i - 1].peak);
      ++run_length;
      if (run_length >= 2) shared_segment = true;
    } else {
      ++segments;
      plans_seen.insert(curve[i].plan);
      run_length = 1;
    }
  }
  std::printf("[acceptance]   C9 curve: %zu distinct sizes, %zu plan segments, %zu distinct plans\n",
              curve.size(), segments, plans_seen.size());
  REQUIRE(plans_seen.size() >= 2);
  REQUIRE(shared_segment);
}
