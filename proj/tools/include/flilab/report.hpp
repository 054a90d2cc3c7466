#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flilab/fit.hpp"
#include "flilab/simulate.hpp"

namespace flilab {

/// Per-pixel lifetime table of one method, read from a fit or prediction CSV.
struct MethodResult {
  std::string method;
  std::vector<FitCsvRow> rows;
  /// Wall time per evaluated pixel, when known.
  std::optional<double> seconds_per_pixel;
};

struct ReportRow {
  std::string method;
  int region = 0;
  std::size_t pixels = 0;   // rows with a finite tau_m
  std::size_t missing = 0;  // foreground pixels of the region without one
  double tau_m_mean = 0;
  double tau_m_std = 0;
  double truth_tau_m = 0;
  double mae = 0;
  double bias = 0;
  std::optional<double> seconds_per_pixel;
  std::vector<double> values;  // finite tau_m samples, in row order
};

/// One row per (method, region), methods in input order and regions
/// ascending. Throws ConfigError when a row's region disagrees with the
/// truth mask or a pixel lies outside the truth dataset.
std::vector<ReportRow> build_report(const FliDataset& truth, const std::vector<MethodResult>& methods);

/// Header: method,region,pixels,missing,tau_m_mean,tau_m_std,truth_tau_m,mae,bias,seconds_per_pixel
void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows);
extern const char* const kReportCsvHeader;

/// Quartile box plot of tau_m per method for one region, with the truth as a
/// dashed line.
void write_region_svg(std::ostream& os, int region, const std::vector<ReportRow>& rows);

/// Linear-interpolated quantile of sorted data, q in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double q);

}  // namespace flilab
