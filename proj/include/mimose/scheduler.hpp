// SPDX-License-Identifier: Apache-2.0
//
// Bucketed greedy selection of layers to drop, plus the input-size-keyed plan
// cache that lets repeated sizes reuse earlier plans.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <vector>

#include "mimose/estimator.hpp"
#include "mimose/model_spec.hpp"
#include "mimose/simulator.hpp"

namespace mimose {

struct SchedulerConfig {
  Bytes budget_bytes = 0;
  Bytes reserve_bytes = -1;        // -1 selects the default of 8% of the budget
  double bucket_tolerance = 0.10;  // relative bucket width
  double cache_tolerance = 0.0;    // relative input-size width for plan reuse
  bool excess_includes_constant = true;

  Bytes effective_reserve() const {
    if (reserve_bytes >= 0) return reserve_bytes;
    return round_bytes(0.08 * static_cast<double>(budget_bytes));
  }

  Bytes effective_budget() const { return budget_bytes - effective_reserve(); }

  void validate() const {
    if (budget_bytes <= 0) throw Error("scheduler: budget must be positive");
    if (bucket_tolerance < 0.0 || bucket_tolerance >= 1.0) {
      throw Error("scheduler: bucket_tolerance must be in [0, 1)");
    }
    if (cache_tolerance < 0.0 || cache_tolerance >= 1.0) {
      throw Error("scheduler: cache_tolerance must be in [0, 1)");
    }
    if (effective_reserve() >= budget_bytes) {
      throw Error("scheduler: reserve must be smaller than the budget");
    }
  }
};

namespace detail {

struct BucketEntry {
  int layer_id;
  int position;
  Bytes est_bytes;
};

struct Bucket {
  std::vector<BucketEntry> members;  // sorted by position ascending

  Bytes max_est() const {
    Bytes m = 0;
    for (const auto& e : members) m = std::max(m, e.est_bytes);
    return m;
  }
};

}  // namespace detail

// Greedy plan generation:
//   1. predict per-layer bytes for x,
//   2. group layers whose estimates lie within bucket_tolerance of the bucket
//      head (stream processed in descending estimate order), each bucket
//      ordered by forward timestamp,
//   3. cover excess = (sum of estimates [+ C]) - (budget - reserve) by
//      repeatedly taking the earliest layer of the smallest bucket that can
//      cover the remaining excess on its own, falling back to the largest
//      bucket when none can.
// If every layer is selected and excess is still positive the plan is
// returned flagged insufficient_budget instead of raising.
inline CheckpointPlan generate_plan(const EstimatorModel& est, const ModelSpec& model,
                                    InputSize x, const SchedulerConfig& config) {
  if (!est.trained) throw Error("generate_plan: estimator is not trained");
  config.validate();
  model.require_in_range(x);

  struct Item {
    int layer_id;
    int position;
    Bytes est_bytes;
  };
  std::vector<Item> items;
  items.reserve(model.layers.size());
  Bytes est_sum = 0;
  for (const auto& l : model.layers) {
    Bytes b = predict(est, l.id, x);
    est_sum += b;
    items.push_back({l.id, l.position, b});
  }

  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.est_bytes != b.est_bytes) return a.est_bytes > b.est_bytes;
    return a.position < b.position;
  });

  std::vector<detail::Bucket> buckets;
  std::size_t i = 0;
  while (i < items.size()) {
    const Bytes head = items[i].est_bytes;
    const double floor = static_cast<double>(head) * (1.0 - config.bucket_tolerance);
    detail::Bucket bucket;
    bucket.members.push_back({items[i].layer_id, items[i].position, items[i].est_bytes});
    ++i;
    while (i < items.size() && static_cast<double>(items[i].est_bytes) > floor) {
      bucket.members.push_back({items[i].layer_id, items[i].position, items[i].est_bytes});
      ++i;
    }
    std::sort(bucket.members.begin(), bucket.members.end(),
              [](const detail::BucketEntry& a, const detail::BucketEntry& b) {
                return a.position < b.position;
              });
    buckets.push_back(std::move(bucket));
  }

  Bytes excess = est_sum - config.effective_budget();
  if (config.excess_includes_constant) excess += model.constant_footprint;

  CheckpointPlan plan;
  plan.source_input_size = x;

  while (excess > 0) {
    // Candidate buckets can cover the remaining excess with one member.
    // Buckets are strictly ordered (every member of an earlier bucket
    // outweighs every member of a later one), so candidates form a prefix;
    // the last candidate is the one nearest the excess from above.
    int chosen = -1;
    for (std::size_t b = buckets.size(); b-- > 0;) {
      if (buckets[b].members.empty()) continue;
      if (buckets[b].max_est() > excess) {
        chosen = static_cast<int>(b);
        break;
      }
    }
    if (chosen < 0) {
      // No single layer covers the excess: take the largest remaining layer.
      for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (!buckets[b].members.empty()) {
          chosen = static_cast<int>(b);
          break;
        }
      }
    }
    if (chosen < 0) {
      plan.insufficient_budget = true;
      break;
    }

    auto& members = buckets[static_cast<std::size_t>(chosen)].members;
    const detail::BucketEntry picked = members.front();  // earliest forward timestamp
    members.erase(members.begin());
    plan.dropped_layers.push_back(picked.layer_id);
    excess -= picked.est_bytes;
  }

  plan.normalize();
  return plan;
}

struct PlanCache {
  std::map<InputSize, CheckpointPlan> entries;
  std::int64_t hits = 0;
  std::int64_t misses = 0;
};

namespace detail {

// Estimated end-of-forward residency of `plan` at size x: constant footprint
// plus predicted bytes of every kept layer. This is the quantity the greedy
// selection bounds, so it is also what a tolerant cache hit must re-check.
inline Bytes estimated_kept_bytes(const EstimatorModel& est, const ModelSpec& model,
                                  const CheckpointPlan& plan, InputSize x) {
  Bytes total = model.constant_footprint;
  for (const auto& l : model.layers) {
    if (!plan.contains(l.id)) total += predict(est, l.id, x);
  }
  return total;
}

}  // namespace detail

// Cache lookup keyed by input size. With cache_tolerance = 0 only the exact
// size hits; with tolerance t the nearest key within |x - key| <= t*key hits,
// provided the cached plan still fits the effective budget at x according to
// the estimator. Misses generate, store, and return a fresh plan.
inline std::pair<CheckpointPlan, bool> lookup_or_plan(PlanCache& cache, const EstimatorModel& est,
                                                      const ModelSpec& model, InputSize x,
                                                      const SchedulerConfig& config) {
  auto exact = cache.entries.find(x);
  if (exact != cache.entries.end()) {
    cache.hits += 1;
    return {exact->second, true};
  }

  if (config.cache_tolerance > 0.0 && !cache.entries.empty()) {
    const CheckpointPlan* best = nullptr;
    InputSize best_dist = 0;
    for (const auto& [key, plan] : cache.entries) {
      const double width = config.cache_tolerance * static_cast<double>(key);
      const InputSize dist = std::llabs(x - key);
      if (static_cast<double>(dist) > width) continue;
      if (best == nullptr || dist < best_dist) {
        best = &plan;
        best_dist = dist;
      }
    }
    if (best != nullptr &&
        detail::estimated_kept_bytes(est, model, *best, x) <= config.effective_budget()) {
      cache.hits += 1;
      return {*best, true};
    }
  }

  cache.misses += 1;
  CheckpointPlan plan = generate_plan(est, model, x, config);
  cache.entries[x] = plan;
  return {plan, false};
}

// Wall-clock cost of one full prediction + plan generation pass.
inline double plan_latency_probe_us(const EstimatorModel& est, const ModelSpec& model,
                                    InputSize x, const SchedulerConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  volatile Bytes sink = predict_total(est, model, x);
  (void)sink;
  CheckpointPlan plan = generate_plan(est, model, x, config);
  const auto stop = std::chrono::steady_clock::now();
  (void)plan;
  return std::chrono::duration<double, std::micro>(stop - start).count();
}

inline void write_plan(const CheckpointPlan& plan, std::ostream& out) {
  out << "source_input_size: " << plan.source_input_size << '\n';
  out << "generated_at_iter: " << plan.generated_at_iter << '\n';
  out << "insufficient_budget: " << (plan.insufficient_budget ? "true" : "false") << '\n';
  out << "dropped_layers:";
  for (int id : plan.dropped_layers) out << ' ' << id;
  out << '\n';
}

}  // namespace mimose
