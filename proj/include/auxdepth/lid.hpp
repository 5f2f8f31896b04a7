#pragma once

// Linear-Increasing Discretization of the depth axis. Bin widths grow in
// arithmetic progression, so near depths get finer bins. The printed
// piecewise form from the source material is kept behind Formula::PaperEq2
// for fidelity experiments; it is dimensionless and non-monotonic, so the
// standard form is the default everywhere.

#include <cmath>
#include <vector>

#include "auxdepth/common.hpp"

namespace auxdepth::lid {

enum class Formula { Standard, PaperEq2 };

struct Config {
  double d_min = 1.0;
  double d_max = 65.0;
  int bins = 64;
  Formula formula = Formula::Standard;
};

inline void validate(const Config& cfg) {
  if (!(cfg.d_min > 0.0) || !(cfg.d_min < cfg.d_max))
    fail(Error::Kind::Config, "lid: need 0 < d_min < d_max, got d_min=" +
                                  std::to_string(cfg.d_min) + " d_max=" +
                                  std::to_string(cfg.d_max));
  if (cfg.bins < 2) fail(Error::Kind::Config, "lid: need at least 2 bins");
}

/// The literal printed sequence B_i = (i+1)^2/D for i < sqrt(D), else
/// (i+1)/D, mapped onto [d_min, d_max]. Non-monotonic for most D; exposed
/// only for fidelity experiments.
inline std::vector<double> paper_eq2_edges(const Config& cfg) {
  validate(cfg);
  const int d = cfg.bins;
  const double span = cfg.d_max - cfg.d_min;
  std::vector<double> edges(static_cast<std::size_t>(d) + 1);
  edges[0] = cfg.d_min;
  const double root = std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i) {
    const double b = (i < root) ? double(i + 1) * double(i + 1) / d : double(i + 1) / d;
    edges[static_cast<std::size_t>(i) + 1] = cfg.d_min + span * b;
  }
  return edges;
}

/// D+1 strictly increasing edges with edge_0 = d_min and edge_D = d_max;
/// widths grow linearly with constant second difference
/// 2 (d_max - d_min) / (D (D + 1)).
inline std::vector<double> bin_edges(const Config& cfg) {
  validate(cfg);
  if (cfg.formula == Formula::PaperEq2) return paper_eq2_edges(cfg);
  const int d = cfg.bins;
  const double span = cfg.d_max - cfg.d_min;
  const double denom = static_cast<double>(d) * (d + 1);
  std::vector<double> edges(static_cast<std::size_t>(d) + 1);
  for (int i = 0; i <= d; ++i)
    edges[static_cast<std::size_t>(i)] =
        cfg.d_min + span * static_cast<double>(i) * (i + 1) / denom;
  edges[0] = cfg.d_min;
  edges[static_cast<std::size_t>(d)] = cfg.d_max;
  return edges;
}

inline double bin_edge(int i, const Config& cfg) {
  const double span = cfg.d_max - cfg.d_min;
  const double denom = static_cast<double>(cfg.bins) * (cfg.bins + 1);
  if (i <= 0) return cfg.d_min;
  if (i >= cfg.bins) return cfg.d_max;
  return cfg.d_min + span * static_cast<double>(i) * (i + 1) / denom;
}

/// Bin index of depth d: the i with edge_i <= d < edge_{i+1}. Out-of-range
/// depths clamp to the first or last bin. Closed form with a local
/// correction for floating-point rounding at the edges.
inline int depth_to_bin(double depth, const Config& cfg) {
  validate(cfg);
  if (cfg.formula == Formula::PaperEq2) {
    const auto edges = paper_eq2_edges(cfg);
    if (depth < edges[0]) return 0;
    for (int i = 0; i < cfg.bins; ++i)
      if (depth >= edges[static_cast<std::size_t>(i)] &&
          depth < edges[static_cast<std::size_t>(i) + 1])
        return i;
    return cfg.bins - 1;
  }
  if (depth < cfg.d_min) return 0;
  if (depth >= cfg.d_max) return cfg.bins - 1;
  const double t = (depth - cfg.d_min) / (cfg.d_max - cfg.d_min);
  const double u = t * static_cast<double>(cfg.bins) * (cfg.bins + 1);
  int i = static_cast<int>(std::floor((-1.0 + std::sqrt(1.0 + 4.0 * u)) / 2.0));
  i = i < 0 ? 0 : (i > cfg.bins - 1 ? cfg.bins - 1 : i);
  while (i > 0 && depth < bin_edge(i, cfg)) --i;
  while (i < cfg.bins - 1 && depth >= bin_edge(i + 1, cfg)) ++i;
  return i;
}

/// Midpoint of bin i; strictly increasing in i.
inline double bin_center(int i, const Config& cfg) {
  validate(cfg);
  if (i < 0 || i >= cfg.bins)
    fail(Error::Kind::Bounds, "lid: bin index " + std::to_string(i) + " outside [0, " +
                                  std::to_string(cfg.bins) + ")");
  if (cfg.formula == Formula::PaperEq2) {
    const auto edges = paper_eq2_edges(cfg);
    return 0.5 * (edges[static_cast<std::size_t>(i)] + edges[static_cast<std::size_t>(i) + 1]);
  }
  return 0.5 * (bin_edge(i, cfg) + bin_edge(i + 1, cfg));
}

}  // namespace auxdepth::lid
