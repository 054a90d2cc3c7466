#include "flilab/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flilab/error.hpp"

namespace flilab {

void TimeAxis::validate() const {
  if (gates < 2) throw ConfigError("gates", "need at least 2 gates");
  if (!(dt_ps > 0) || !std::isfinite(dt_ps)) throw ConfigError("dt_ps", "gate spacing must be positive");
  if (!std::isfinite(t0_ps)) throw ConfigError("t0_ps", "axis origin must be finite");
}

double TimeHistogram::total() const noexcept {
  double s = 0;
  for (double c : counts) s += c;
  return s;
}

double TimeHistogram::peak() const noexcept {
  return counts.empty() ? 0.0 : *std::max_element(counts.begin(), counts.end());
}

double TimeHistogram::centroid_ps() const {
  double w = 0, s = 0;
  for (std::size_t n = 0; n < counts.size(); ++n) {
    w += counts[n];
    s += counts[n] * axis.time_ps(n);
  }
  if (!(w > 0)) throw UndefinedInputError("centroid of a histogram with zero total counts");
  return s / w;
}

void TimeHistogram::validate() const {
  if (counts.size() != axis.gates)
    throw DimensionError("histogram has " + std::to_string(counts.size()) + " gates, axis expects " +
                         std::to_string(axis.gates));
  for (double c : counts)
    if (!std::isfinite(c) || c < 0) throw ContractError("histogram counts must be finite and non-negative");
}

void LifetimeParams::validate() const {
  if (!(tau1_ns > 0) || !(tau2_ns >= tau1_ns) || !std::isfinite(tau2_ns))
    throw ContractError("lifetimes must satisfy 0 < tau1 <= tau2");
  if (!(a_r >= 0 && a_r <= 1)) throw ContractError("a_r must lie in [0, 1]");
}

double mean_lifetime(const LifetimeParams& p) { return p.a_r * p.tau1_ns + (1.0 - p.a_r) * p.tau2_ns; }

void peak_normalize(std::vector<double>& v) noexcept {
  if (v.empty()) return;
  const double m = *std::max_element(v.begin(), v.end());
  if (!(m > 0)) return;
  for (double& x : v) x /= m;
}

}  // namespace flilab
