// SPDX-License-Identifier: Apache-2.0
//
// Sheltered execution: the shuttling double-forward that measures per-layer
// memory and time for unseen input sizes while keeping residency at the
// conservative (all-layers-checkpointed) level. Includes the data filter and
// the collect/skip policy.

#pragma once

#include <cstdint>
#include <ostream>
#include <set>
#include <vector>

#include "mimose/model_spec.hpp"
#include "mimose/simulator.hpp"

namespace mimose {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Multiplicative relative measurement error, uniform in [-epsilon, epsilon].
// Hash-seeded per (layer, input size) so collection order cannot change the
// drawn value.
struct NoiseModel {
  double epsilon = 0.0;
  std::uint64_t seed = 0;

  double delta(int layer_id, InputSize x) const {
    if (epsilon == 0.0) return 0.0;
    std::uint64_t h = detail::splitmix64(seed ^ detail::splitmix64(
                          static_cast<std::uint64_t>(layer_id) ^
                          detail::splitmix64(static_cast<std::uint64_t>(x))));
    double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
    return epsilon * (2.0 * u - 1.0);
  }
};

struct CollectedSample {
  int layer_id = 0;
  InputSize input_size = 0;
  Bytes measured_activation_bytes = 0;
  double measured_forward_ms = 0.0;
  bool valid = false;
};

// Measurement-context flags standing in for the module tree: a raw record is
// clean only if neither the layer itself nor any enclosing/enclosed layer was
// under a checkpoint context when it was measured.
struct RawContext {
  bool self_checkpointed = false;
  bool ancestor_checkpointed = false;
  bool descendant_checkpointed = false;
};

struct RawRecord {
  CollectedSample sample;
  RawContext context;
};

// Keeps only clean records and marks them valid. Idempotent.
inline std::vector<RawRecord> apply_filter(const std::vector<RawRecord>& raw) {
  std::vector<RawRecord> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    if (r.context.self_checkpointed) continue;        // no activation tensor exists
    if (r.context.ancestor_checkpointed) continue;    // measured under a checkpoint scope
    if (r.context.descendant_checkpointed) continue;  // inner checkpointing skews the reading
    RawRecord kept = r;
    kept.sample.valid = true;
    out.push_back(kept);
  }
  return out;
}

inline std::vector<CollectedSample> filter_samples(const std::vector<RawRecord>& raw) {
  std::vector<CollectedSample> out;
  for (const auto& r : apply_filter(raw)) out.push_back(r.sample);
  return out;
}

struct CollectorConfig {
  int max_sheltered_iters = 10;
  bool collect_new_sizes_always = false;
};

struct CollectorState {
  std::set<InputSize> seen_sizes;
  std::vector<CollectedSample> samples;  // committed valid samples
  std::int64_t collected_iterations = 0;
  NoiseModel noise;

  int distinct_sizes() const { return static_cast<int>(seen_sizes.size()); }
};

struct CollectResult {
  std::vector<CollectedSample> committed;  // empty when the size was already seen
  MemoryTimeline timeline;
};

// Runs one sheltered iteration at input size x. Every layer forwards twice:
// the first pass materializes a_i(x) and records the measurement, the second
// re-runs it checkpointed so only the boundary output stays resident. The
// backward pass recomputes every layer, so residency matches the all-layers
// plan throughout. Costs 5x the total forward time (a plain iteration is 3x).
inline CollectResult collect_iteration(const ModelSpec& model, CollectorState& state,
                                       InputSize x) {
  model.require_in_range(x);

  CollectResult result;
  const auto L = model.layers.size();
  auto& tl = result.timeline;
  tl.events.reserve(4 * L + 1);

  Bytes resident = model.constant_footprint;
  double t = 0.0;
  tl.events.push_back({Phase::Start, -1, resident, t});
  Bytes peak = resident;

  const bool unseen = state.seen_sizes.find(x) == state.seen_sizes.end();
  std::vector<RawRecord> raw;

  for (std::size_t i = 0; i < L; ++i) {
    const auto& l = model.layers[i];
    const Bytes a = round_bytes(l.activation_at(static_cast<double>(x)));
    const Bytes o = round_bytes(l.boundary_at(static_cast<double>(x)));
    const double f = l.forward_ms(x);

    // Measuring pass: full materialization, then discard.
    t += f;
    tl.events.push_back({Phase::Forward, l.id, resident + a, t});
    peak = std::max(peak, resident + a);
    if (unseen) {
      RawRecord rec;
      rec.sample.layer_id = l.id;
      rec.sample.input_size = x;
      rec.sample.measured_activation_bytes =
          round_bytes(static_cast<double>(a) * (1.0 + state.noise.delta(l.id, x)));
      rec.sample.measured_forward_ms = f;
      raw.push_back(rec);
    }

    // Checkpointed pass: keep only the boundary output.
    t += f;
    resident += o;
    tl.events.push_back({Phase::ForwardDrop, l.id, resident, t});
    peak = std::max(peak, resident);
  }

  for (std::size_t r = L; r-- > 0;) {
    const auto& l = model.layers[r];
    const Bytes a = round_bytes(l.activation_at(static_cast<double>(x)));
    const Bytes o = round_bytes(l.boundary_at(static_cast<double>(x)));
    const double f = l.forward_ms(x);

    resident += a - o;
    t += f;
    tl.events.push_back({Phase::Recompute, l.id, resident, t});
    peak = std::max(peak, resident);
    tl.recompute_time_ms += f;

    t += 2.0 * f;
    resident -= a;
    tl.events.push_back({Phase::Backward, l.id, resident, t});
  }

  tl.peak_bytes = peak;
  tl.iteration_time_ms = t;

  for (const auto& sample : filter_samples(raw)) {
    result.committed.push_back(sample);
    state.samples.push_back(sample);
  }
  state.seen_sizes.insert(x);
  state.collected_iterations += 1;
  return result;
}

// Collect on unseen sizes inside the sheltered window; in every-new-size mode
// any unseen size triggers collection regardless of the iteration index.
inline bool should_collect(const CollectorState& state, InputSize x, std::int64_t iter_index,
                           const CollectorConfig& config) {
  const bool unseen = state.seen_sizes.find(x) == state.seen_sizes.end();
  if (!unseen) return false;
  if (iter_index < config.max_sheltered_iters) return true;
  return config.collect_new_sizes_always;
}

inline void write_samples_csv(const std::vector<CollectedSample>& samples, std::ostream& out) {
  out << "layer_id,input_size,bytes,ms,valid\n";
  for (const auto& s : samples) {
    out << s.layer_id << ',' << s.input_size << ',' << s.measured_activation_bytes << ','
        << detail::format_double(s.measured_forward_ms) << ',' << (s.valid ? 1 : 0) << '\n';
  }
}

}  // namespace mimose
