// SPDX-License-Identifier: Apache-2.0
//
// Comparison planners: a static planner that provisions once for the maximum
// input size, and a dynamic eviction simulator that reacts to memory pressure
// allocation by allocation.

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mimose/model_spec.hpp"
#include "mimose/scheduler.hpp"
#include "mimose/simulator.hpp"

namespace mimose {

// One plan, generated against x_max, applied unchanged to every iteration.
inline CheckpointPlan static_max_plan(const EstimatorModel& est, const ModelSpec& model,
                                      InputSize x_max, const SchedulerConfig& config) {
  return generate_plan(est, model, x_max, config);
}

struct DtrConfig {
  Bytes budget_bytes = 0;
  double eviction_cost_ms = 0.05;  // fixed planning cost per eviction decision
};

struct EvictionState {
  std::int64_t evictions = 0;
  double planning_cost_ms = 0.0;
  std::vector<int> evicted_layers;  // ids, in eviction order
  bool oom_infeasible = false;
};

struct DtrResult {
  MemoryTimeline timeline;
  EvictionState state;
};

namespace detail {

struct DtrLayer {
  Bytes act;
  Bytes bnd;
  double fwd;
  std::int64_t last_use = 0;
  bool resident = false;  // full activation set held
  bool evicted = false;   // boundary-only, needs recompute at backward
  bool released = false;  // backward done
};

}  // namespace detail

// Reactive per-iteration eviction at layer granularity. Whenever the next
// allocation would exceed the budget, the resident activation maximizing
// staleness * bytes / forward_ms is dropped to its boundary until the
// allocation fits. Evicted layers are recomputed when backward reaches them,
// which can trigger further evictions. Nothing carries over between
// iterations, and boundary tensors are never evicted.
inline DtrResult dtr_simulate_iteration(const ModelSpec& model, InputSize x,
                                        const DtrConfig& config) {
  if (config.budget_bytes <= 0) throw Error("dtr: budget must be positive");
  model.require_in_range(x);

  const std::size_t L = model.layers.size();
  std::vector<detail::DtrLayer> st(L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto& l = model.layers[i];
    st[i].act = round_bytes(l.activation_at(static_cast<double>(x)));
    st[i].bnd = round_bytes(l.boundary_at(static_cast<double>(x)));
    st[i].fwd = l.forward_ms(x);
  }

  DtrResult result;
  auto& tl = result.timeline;
  auto& ev = result.state;

  Bytes resident = model.constant_footprint;
  double t = 0.0;
  std::int64_t clock = 0;
  tl.events.push_back({Phase::Start, -1, resident, t});
  Bytes peak = resident;

  // Frees memory until `need` more bytes fit, or reports failure.
  auto evict_until_fits = [&](Bytes need) -> bool {
    while (resident + need > config.budget_bytes) {
      std::size_t victim = L;
      double best_score = -1.0;
      for (std::size_t j = 0; j < L; ++j) {
        if (!st[j].resident || st[j].act <= st[j].bnd) continue;
        const double staleness = static_cast<double>(clock - st[j].last_use);
        const double score =
            staleness * static_cast<double>(st[j].act) / st[j].fwd;
        if (score > best_score) {
          best_score = score;
          victim = j;
        }
      }
      if (victim == L) return false;
      st[victim].resident = false;
      st[victim].evicted = true;
      resident -= st[victim].act - st[victim].bnd;
      ev.evictions += 1;
      ev.evicted_layers.push_back(model.layers[victim].id);
      ev.planning_cost_ms += config.eviction_cost_ms;
    }
    return true;
  };

  // Forward pass: materialize each activation set in full.
  for (std::size_t i = 0; i < L; ++i) {
    ++clock;
    if (!evict_until_fits(st[i].act)) {
      ev.oom_infeasible = true;
      tl.peak_bytes = peak;
      tl.iteration_time_ms = t;
      return result;
    }
    resident += st[i].act;
    st[i].resident = true;
    st[i].last_use = clock;
    t += st[i].fwd;
    tl.events.push_back({Phase::Forward, model.layers[i].id, resident, t});
    peak = std::max(peak, resident);
  }

  // Backward pass: recompute evicted layers on demand.
  for (std::size_t r = L; r-- > 0;) {
    ++clock;
    if (st[r].evicted) {
      if (!evict_until_fits(st[r].act - st[r].bnd)) {
        ev.oom_infeasible = true;
        tl.peak_bytes = peak;
        tl.iteration_time_ms = t;
        return result;
      }
      resident += st[r].act - st[r].bnd;
      st[r].resident = true;
      st[r].evicted = false;
      st[r].last_use = clock;
      t += st[r].fwd;
      tl.events.push_back({Phase::Recompute, model.layers[r].id, resident, t});
      peak = std::max(peak, resident);
      tl.recompute_time_ms += st[r].fwd;
    }
    t += 2.0 * st[r].fwd;
    resident -= st[r].act;
    st[r].resident = false;
    st[r].released = true;
    tl.events.push_back({Phase::Backward, model.layers[r].id, resident, t});
  }

  t += ev.planning_cost_ms;
  tl.peak_bytes = peak;
  tl.iteration_time_ms = t;
  return result;
}

}  // namespace mimose
