#pragma once

#include <cstddef>
#include <vector>

namespace flilab {

/// Gate axis of a time-gated acquisition. Gate n sits at t0_ps + n * dt_ps.
struct TimeAxis {
  std::size_t gates = 176;
  double dt_ps = 40.0;
  double t0_ps = 0.0;

  double time_ps(std::size_t gate) const noexcept { return t0_ps + dt_ps * static_cast<double>(gate); }
  void validate() const;
  bool operator==(const TimeAxis&) const = default;
};

/// Photon counts per gate (a TPSF or an IRF).
struct TimeHistogram {
  TimeAxis axis;
  std::vector<double> counts;
  /// Set by make_irf when more than a quarter of the pulse falls outside the axis.
  bool clipped = false;

  TimeHistogram() = default;
  TimeHistogram(TimeAxis a, std::vector<double> c) : axis(a), counts(std::move(c)) {}
  explicit TimeHistogram(TimeAxis a) : axis(a), counts(a.gates, 0.0) {}

  std::size_t size() const noexcept { return counts.size(); }
  double total() const noexcept;
  double peak() const noexcept;
  /// Count-weighted mean gate time in ps; throws UndefinedInputError on zero total.
  double centroid_ps() const;
  /// Checks length == gates and that every count is finite and >= 0.
  void validate() const;
};

/// Bi-exponential decay parameters; lifetimes in ns, a_r is the fraction of tau1.
struct LifetimeParams {
  double tau1_ns = 0.5;
  double tau2_ns = 1.0;
  double a_r = 0.5;

  void validate() const;
  bool operator==(const LifetimeParams&) const = default;
};

/// Amplitude-weighted mean lifetime a_r * tau1 + (1 - a_r) * tau2, in ns.
double mean_lifetime(const LifetimeParams& p);

/// Divides by the maximum in place; an all-zero vector is left unchanged.
void peak_normalize(std::vector<double>& v) noexcept;

}  // namespace flilab
