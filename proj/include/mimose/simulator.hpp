// SPDX-License-Identifier: Apache-2.0
//
// Deterministic replay of one training iteration under a checkpointing plan.
// Produces the event timeline, peak resident memory, and iteration time, and
// hosts the exhaustive optimal-plan oracle used for verification.

#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mimose/model_spec.hpp"

namespace mimose {

enum class Phase {
  Start,
  Forward,
  ForwardDrop,
  Backward,
  Recompute,
};

inline std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Start: return "start";
    case Phase::Forward: return "forward";
    case Phase::ForwardDrop: return "forward-drop";
    case Phase::Backward: return "backward";
    case Phase::Recompute: return "recompute";
  }
  return "unknown";
}

struct CheckpointPlan {
  std::vector<int> dropped_layers;  // layer ids, kept sorted
  InputSize source_input_size = 0;
  std::int64_t generated_at_iter = -1;
  bool insufficient_budget = false;

  void normalize() {
    std::sort(dropped_layers.begin(), dropped_layers.end());
    dropped_layers.erase(std::unique(dropped_layers.begin(), dropped_layers.end()),
                         dropped_layers.end());
  }

  bool contains(int layer_id) const {
    return std::binary_search(dropped_layers.begin(), dropped_layers.end(), layer_id);
  }

  std::size_t size() const { return dropped_layers.size(); }
  bool empty() const { return dropped_layers.empty(); }
};

struct TimelineEvent {
  Phase phase;
  int layer_id;          // -1 for the start event
  Bytes resident_bytes;  // resident memory at this event (transients included)
  double time_ms;        // cumulative simulated time
};

struct MemoryTimeline {
  std::vector<TimelineEvent> events;
  Bytes peak_bytes = 0;
  double iteration_time_ms = 0.0;
  double recompute_time_ms = 0.0;
};

inline void write_timeline_csv(const MemoryTimeline& tl, std::ostream& out) {
  out << "phase,layer_id,resident_bytes,time_ms\n";
  for (const auto& ev : tl.events) {
    out << phase_name(ev.phase) << ',' << ev.layer_id << ',' << ev.resident_bytes << ','
        << detail::format_double(ev.time_ms) << '\n';
  }
}

namespace detail {

inline void require_plan_valid(const ModelSpec& model, const CheckpointPlan& plan) {
  for (int id : plan.dropped_layers) {
    if (model.find_layer(id) == nullptr) {
      throw Error("plan references unknown layer id " + std::to_string(id));
    }
  }
}

}  // namespace detail

// Replays one iteration. Accounting:
//   forward, kept layer i:    resident += a_i(x)
//   forward, dropped layer i: a_i(x) is materialized transiently (the recorded
//                             event carries the transient), then released; the
//                             layer's boundary output o_i(x) stays resident as
//                             the replay input.
//   backward, dropped layer:  recompute materializes the interior a_i - o_i on
//                             top of the retained boundary, costing f_i; then
//                             the backward step releases a_i.
//   backward, kept layer:     releases a_i.
// Backward time is 2x forward per layer. Resident starts and ends at the
// model's constant footprint.
inline MemoryTimeline simulate_iteration(const ModelSpec& model, const CheckpointPlan& plan,
                                         InputSize x) {
  model.require_in_range(x);
  detail::require_plan_valid(model, plan);

  const auto L = model.layers.size();
  MemoryTimeline tl;
  tl.events.reserve(2 * L + plan.size() + 1);

  Bytes resident = model.constant_footprint;
  double t = 0.0;

  tl.events.push_back({Phase::Start, -1, resident, t});
  Bytes peak = resident;

  std::vector<Bytes> act(L), bnd(L);
  std::vector<double> fwd(L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto& l = model.layers[i];
    act[i] = round_bytes(l.activation_at(static_cast<double>(x)));
    bnd[i] = round_bytes(l.boundary_at(static_cast<double>(x)));
    fwd[i] = l.forward_ms(x);
  }

  for (std::size_t i = 0; i < L; ++i) {
    const bool dropped = plan.contains(model.layers[i].id);
    t += fwd[i];
    if (dropped) {
      tl.events.push_back({Phase::ForwardDrop, model.layers[i].id, resident + act[i], t});
      peak = std::max(peak, resident + act[i]);
      resident += bnd[i];
    } else {
      resident += act[i];
      tl.events.push_back({Phase::Forward, model.layers[i].id, resident, t});
      peak = std::max(peak, resident);
    }
  }

  for (std::size_t r = L; r-- > 0;) {
    const bool dropped = plan.contains(model.layers[r].id);
    if (dropped) {
      resident += act[r] - bnd[r];
      t += fwd[r];
      tl.events.push_back({Phase::Recompute, model.layers[r].id, resident, t});
      peak = std::max(peak, resident);
      tl.recompute_time_ms += fwd[r];
    }
    t += 2.0 * fwd[r];
    resident -= act[r];
    tl.events.push_back({Phase::Backward, model.layers[r].id, resident, t});
    peak = std::max(peak, resident);
  }

  tl.peak_bytes = peak;
  tl.iteration_time_ms = t;
  return tl;
}

inline Bytes peak_memory(const ModelSpec& model, const CheckpointPlan& plan, InputSize x) {
  return simulate_iteration(model, plan, x).peak_bytes;
}

struct OracleResult {
  bool feasible = false;
  CheckpointPlan plan;
  double recompute_ms = 0.0;
};

// Enumerates all 2^L drop sets and returns a feasible plan with minimal
// recompute time. Ties break toward fewer dropped layers, then toward the
// lexicographically earliest position set, so golden values are stable.
inline OracleResult brute_force_plan(const ModelSpec& model, InputSize x, Bytes budget_bytes) {
  const std::size_t L = model.layers.size();
  if (L > 20) {
    throw Error("brute_force_plan: enumeration guard allows at most 20 layers, got " +
                std::to_string(L));
  }
  model.require_in_range(x);

  OracleResult best;
  std::vector<int> best_positions;

  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << L); ++mask) {
    CheckpointPlan plan;
    std::vector<int> positions;
    for (std::size_t p = 0; p < L; ++p) {
      if (mask & (std::uint64_t{1} << p)) {
        plan.dropped_layers.push_back(model.layers[p].id);
        positions.push_back(static_cast<int>(p));
      }
    }
    plan.normalize();
    plan.source_input_size = x;

    MemoryTimeline tl = simulate_iteration(model, plan, x);
    if (tl.peak_bytes > budget_bytes) continue;

    bool better = false;
    if (!best.feasible) {
      better = true;
    } else if (tl.recompute_time_ms != best.recompute_ms) {
      better = tl.recompute_time_ms < best.recompute_ms;
    } else if (positions.size() != best_positions.size()) {
      better = positions.size() < best_positions.size();
    } else {
      better = positions < best_positions;
    }
    if (better) {
      best.feasible = true;
      best.plan = std::move(plan);
      best.recompute_ms = tl.recompute_time_ms;
      best_positions = std::move(positions);
    }
  }
  return best;
}

}  // namespace mimose
