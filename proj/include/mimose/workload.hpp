// SPDX-License-Identifier: Apache-2.0
//
// Seeded input-size sequence generation: uniform, normal, and power-law
// distributions over a size-unit range, scaled by a batch multiplier.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mimose/model_spec.hpp"

namespace mimose {

enum class Distribution { Uniform, Normal, PowerLaw };

inline std::string_view to_string(Distribution d) {
  switch (d) {
    case Distribution::Uniform: return "uniform";
    case Distribution::Normal: return "normal";
    case Distribution::PowerLaw: return "power-law";
  }
  return "unknown";
}

struct WorkloadSpec {
  Distribution dist = Distribution::Uniform;
  std::int64_t unit_min = 1;   // e.g. sequence length range
  std::int64_t unit_max = 1;
  double mu = 0.0;             // normal
  double sigma = 1.0;          // normal
  double alpha = 2.0;          // power-law exponent
  std::int64_t batch_multiplier = 1;  // elements per size unit
  std::int64_t iterations = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (unit_min < 1 || unit_min > unit_max) throw Error("workload: bad unit range");
    if (batch_multiplier < 1) throw Error("workload: batch_multiplier must be >= 1");
    if (iterations < 0) throw Error("workload: negative iteration count");
    if (dist == Distribution::Normal && sigma <= 0.0) throw Error("workload: sigma must be > 0");
    if (dist == Distribution::PowerLaw && alpha <= 0.0) throw Error("workload: alpha must be > 0");
  }
};

namespace detail {

// mt19937_64 output mapped to [0, 1) without std::uniform_real_distribution,
// keeping the stream identical across standard library implementations.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Deterministic seeded sequence of input sizes (element counts). Continuous
// draws are rounded to the nearest unit and clamped into [unit_min, unit_max]
// before scaling by the batch multiplier.
inline std::vector<InputSize> sample_workload(const WorkloadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<InputSize> sizes;
  sizes.reserve(static_cast<std::size_t>(spec.iterations));

  const double lo = static_cast<double>(spec.unit_min);
  const double hi = static_cast<double>(spec.unit_max);

  for (std::int64_t i = 0; i < spec.iterations; ++i) {
    std::int64_t unit = 0;
    switch (spec.dist) {
      case Distribution::Uniform: {
        const std::uint64_t span = static_cast<std::uint64_t>(spec.unit_max - spec.unit_min) + 1;
        unit = spec.unit_min + static_cast<std::int64_t>(rng() % span);
        break;
      }
      case Distribution::Normal: {
        double u1 = detail::unit_uniform(rng);
        double u2 = detail::unit_uniform(rng);
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        unit = static_cast<std::int64_t>(std::llround(spec.mu + spec.sigma * z));
        break;
      }
      case Distribution::PowerLaw: {
        // Inverse CDF of density proportional to u^-alpha on [lo, hi].
        const double u = detail::unit_uniform(rng);
        double v = 0.0;
        if (spec.alpha == 1.0) {
          v = lo * std::pow(hi / lo, u);
        } else {
          const double p = 1.0 - spec.alpha;
          v = std::pow(std::pow(lo, p) + u * (std::pow(hi, p) - std::pow(lo, p)), 1.0 / p);
        }
        unit = static_cast<std::int64_t>(std::llround(v));
        break;
      }
    }
    unit = std::clamp(unit, spec.unit_min, spec.unit_max);
    sizes.push_back(unit * spec.batch_multiplier);
  }
  return sizes;
}

// Parses "uniform:LO:HI", "normal:MU:SIGMA:LO:HI", or "powerlaw:ALPHA:LO:HI"
// (range values are size units, before the batch multiplier).
inline WorkloadSpec parse_distribution(std::string_view text) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t colon = text.find(':', pos);
    if (colon == std::string_view::npos) {
      parts.emplace_back(text.substr(pos));
      break;
    }
    parts.emplace_back(text.substr(pos, colon - pos));
    pos = colon + 1;
  }
  if (parts.empty()) throw ParseError("empty distribution spec");

  WorkloadSpec spec;
  const std::string& kind = parts[0];
  auto num = [&](std::size_t idx) { return detail::parse_double(parts.at(idx), "distribution"); };
  try {
    if (kind == "uniform") {
      if (parts.size() != 3) throw ParseError("uniform takes LO:HI");
      spec.dist = Distribution::Uniform;
      spec.unit_min = static_cast<std::int64_t>(num(1));
      spec.unit_max = static_cast<std::int64_t>(num(2));
    } else if (kind == "normal") {
      if (parts.size() != 5) throw ParseError("normal takes MU:SIGMA:LO:HI");
      spec.dist = Distribution::Normal;
      spec.mu = num(1);
      spec.sigma = num(2);
      spec.unit_min = static_cast<std::int64_t>(num(3));
      spec.unit_max = static_cast<std::int64_t>(num(4));
    } else if (kind == "powerlaw") {
      if (parts.size() != 4) throw ParseError("powerlaw takes ALPHA:LO:HI");
      spec.dist = Distribution::PowerLaw;
      spec.alpha = num(1);
      spec.unit_min = static_cast<std::int64_t>(num(2));
      spec.unit_max = static_cast<std::int64_t>(num(3));
    } else {
      throw ParseError("unknown distribution '" + kind + "'");
    }
  } catch (const std::out_of_range&) {
    throw ParseError("malformed distribution spec: '" + std::string(text) + "'");
  }
  return spec;
}

}  // namespace mimose
