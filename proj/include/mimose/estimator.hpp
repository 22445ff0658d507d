// SPDX-License-Identifier: Apache-2.0
//
// Per-layer polynomial regression over collected (input size, bytes) samples,
// with fit diagnostics, prediction, and a text dump/load format.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "mimose/collector.hpp"
#include "mimose/model_spec.hpp"

namespace mimose {

struct LayerFitStats {
  double mean_rel_err = 0.0;
  double max_rel_err = 0.0;
  int sample_count = 0;
  int distinct_sizes = 0;
};

struct EstimatorModel {
  int order = 2;
  std::map<int, std::vector<double>> per_layer_coeffs;  // id -> c0..c_order
  std::map<int, LayerFitStats> fit_stats;
  bool trained = false;
};

namespace detail {

// Gaussian elimination with partial pivoting; throws on a singular system.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> m,
                                        std::vector<double> rhs, int layer_id) {
  const std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    }
    if (std::abs(m[pivot][col]) < 1e-12) {
      throw Error("layer " + std::to_string(layer_id) +
                  ": rank-deficient design matrix (need more distinct input sizes)");
    }
    std::swap(m[col], m[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      double factor = m[r][col] / m[col][col];
      for (std::size_t c = col; c < n; ++c) m[r][c] -= factor * m[col][c];
      rhs[r] -= factor * rhs[col];
    }
  }
  std::vector<double> sol(n);
  for (std::size_t r = n; r-- > 0;) {
    double acc = rhs[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= m[r][c] * sol[c];
    sol[r] = acc / m[r][r];
  }
  return sol;
}

inline double eval_poly(const std::vector<double>& coeffs, double x) {
  double acc = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 0;) acc = acc * x + coeffs[k];
  return acc;
}

}  // namespace detail

// Ordinary least squares per layer via normal equations. Columns are scaled
// by max|x|^k so the solve stays well conditioned at byte/element magnitudes.
inline EstimatorModel fit(const std::vector<CollectedSample>& samples, int order = 2) {
  if (order < 0 || order > 8) throw Error("unsupported polynomial order " + std::to_string(order));

  std::map<int, std::vector<const CollectedSample*>> by_layer;
  for (const auto& s : samples) {
    if (s.valid) by_layer[s.layer_id].push_back(&s);
  }
  if (by_layer.empty()) throw Error("fit: no valid samples");

  EstimatorModel est;
  est.order = order;
  const int n_coeff = order + 1;

  for (auto& [layer_id, pts] : by_layer) {
    std::set<InputSize> sizes;
    for (const auto* p : pts) sizes.insert(p->input_size);
    if (static_cast<int>(sizes.size()) < n_coeff) {
      throw Error("layer " + std::to_string(layer_id) + ": " + std::to_string(sizes.size()) +
                  " distinct input sizes, need at least " + std::to_string(n_coeff) +
                  " for an order-" + std::to_string(order) + " fit");
    }

    double xmax = 0.0;
    for (const auto* p : pts) xmax = std::max(xmax, std::abs(static_cast<double>(p->input_size)));
    if (xmax == 0.0) xmax = 1.0;

    std::vector<double> scale(n_coeff, 1.0);
    for (int k = 1; k < n_coeff; ++k) scale[k] = scale[k - 1] * xmax;

    std::vector<std::vector<double>> gram(n_coeff, std::vector<double>(n_coeff, 0.0));
    std::vector<double> rhs(n_coeff, 0.0);
    for (const auto* p : pts) {
      const double x = static_cast<double>(p->input_size);
      const double y = static_cast<double>(p->measured_activation_bytes);
      std::vector<double> row(n_coeff);
      double xp = 1.0;
      for (int k = 0; k < n_coeff; ++k) {
        row[k] = xp / scale[k];
        xp *= x;
      }
      for (int r = 0; r < n_coeff; ++r) {
        for (int c = 0; c < n_coeff; ++c) gram[r][c] += row[r] * row[c];
        rhs[r] += row[r] * y;
      }
    }

    std::vector<double> scaled = detail::solve_linear(std::move(gram), std::move(rhs), layer_id);
    std::vector<double> coeffs(n_coeff);
    for (int k = 0; k < n_coeff; ++k) coeffs[k] = scaled[k] / scale[k];

    LayerFitStats stats;
    stats.sample_count = static_cast<int>(pts.size());
    stats.distinct_sizes = static_cast<int>(sizes.size());
    for (const auto* p : pts) {
      const double y = static_cast<double>(p->measured_activation_bytes);
      const double pred = detail::eval_poly(coeffs, static_cast<double>(p->input_size));
      const double rel = std::abs(pred - y) / std::max(y, 1.0);
      stats.mean_rel_err += rel;
      stats.max_rel_err = std::max(stats.max_rel_err, rel);
    }
    stats.mean_rel_err /= static_cast<double>(pts.size());

    est.per_layer_coeffs[layer_id] = std::move(coeffs);
    est.fit_stats[layer_id] = stats;
  }

  est.trained = true;
  return est;
}

// Polynomial evaluation clamped at zero and rounded half-up to bytes.
inline Bytes predict(const EstimatorModel& est, int layer_id, InputSize x) {
  if (!est.trained) throw Error("predict: estimator is not trained");
  auto it = est.per_layer_coeffs.find(layer_id);
  if (it == est.per_layer_coeffs.end()) {
    throw Error("predict: unknown layer id " + std::to_string(layer_id));
  }
  double v = detail::eval_poly(it->second, static_cast<double>(x));
  if (v < 0.0) v = 0.0;
  return round_bytes(v);
}

inline Bytes predict_total(const EstimatorModel& est, const ModelSpec& model, InputSize x) {
  if (!est.trained) throw Error("predict_total: estimator is not trained");
  Bytes total = model.constant_footprint;
  for (const auto& l : model.layers) total += predict(est, l.id, x);
  return total;
}

// Estimator preloaded with the ground-truth activation coefficients; used by
// planners that have full prior model knowledge.
inline EstimatorModel exact_estimator(const ModelSpec& model) {
  EstimatorModel est;
  est.order = 2;
  for (const auto& l : model.layers) {
    est.per_layer_coeffs[l.id] = {l.activation_coeffs[0], l.activation_coeffs[1],
                                  l.activation_coeffs[2]};
    est.fit_stats[l.id] = LayerFitStats{0.0, 0.0, 0, 0};
  }
  est.trained = true;
  return est;
}

inline std::string estimator_to_string(const EstimatorModel& est) {
  if (!est.trained) throw Error("cannot dump an untrained estimator");
  std::ostringstream out;
  out << "version: 1\n";
  out << "order: " << est.order << "\n";
  out << "# layer: <id> <samples> <distinct> <mean_rel_err> <max_rel_err> <c0..cn>\n";
  for (const auto& [id, coeffs] : est.per_layer_coeffs) {
    const auto& st = est.fit_stats.at(id);
    out << "layer: " << id << ' ' << st.sample_count << ' ' << st.distinct_sizes << ' '
        << detail::format_double(st.mean_rel_err) << ' ' << detail::format_double(st.max_rel_err);
    for (double c : coeffs) out << ' ' << detail::format_double(c);
    out << '\n';
  }
  return out.str();
}

inline EstimatorModel estimator_from_string(std::string_view text) {
  EstimatorModel est;
  bool saw_version = false;
  bool saw_order = false;

  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, (nl == std::string_view::npos ? text.size() : nl) - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;

    line = detail::trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError("estimator line " + std::to_string(line_no) + ": expected 'key: value'");
    }
    std::string_view key = detail::trim(line.substr(0, colon));
    std::string_view value = detail::trim(line.substr(colon + 1));

    if (key == "version") {
      if (detail::parse_int(value, key) != 1) throw ParseError("unsupported estimator version");
      saw_version = true;
    } else if (key == "order") {
      est.order = static_cast<int>(detail::parse_int(value, key));
      saw_order = true;
    } else if (key == "layer") {
      auto vals = detail::parse_doubles(value, 5 + static_cast<std::size_t>(est.order) + 1, key);
      int id = static_cast<int>(vals[0]);
      LayerFitStats st;
      st.sample_count = static_cast<int>(vals[1]);
      st.distinct_sizes = static_cast<int>(vals[2]);
      st.mean_rel_err = vals[3];
      st.max_rel_err = vals[4];
      std::vector<double> coeffs(vals.begin() + 5, vals.end());
      est.per_layer_coeffs[id] = std::move(coeffs);
      est.fit_stats[id] = st;
    } else {
      throw ParseError("estimator line " + std::to_string(line_no) + ": unknown key '" +
                       std::string(key) + "'");
    }
  }
  if (!saw_version || !saw_order) throw ParseError("estimator file missing version/order header");
  if (est.per_layer_coeffs.empty()) throw ParseError("estimator file has no layers");
  est.trained = true;
  return est;
}

inline void dump_estimator(const EstimatorModel& est, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write estimator file: " + path.string());
  out << estimator_to_string(est);
}

inline EstimatorModel load_estimator(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open estimator file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return estimator_from_string(buf.str());
}

}  // namespace mimose
