#include "flilab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "flilab/error.hpp"

namespace flilab {
namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double tau_m_of(const LifetimeParams& p) { return p.a_r * p.tau1_ns + (1.0 - p.a_r) * p.tau2_ns; }

}  // namespace

const char* const kReportCsvHeader =
    "method,region,pixels,missing,tau_m_mean,tau_m_std,truth_tau_m,mae,bias,seconds_per_pixel";

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw UndefinedInputError("quantile of an empty sample");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<ReportRow> build_report(const FliDataset& truth, const std::vector<MethodResult>& methods) {
  if (!truth.has_truth()) throw ConfigError("eval.truth", "dataset has no ground-truth maps");
  std::map<int, std::size_t> region_size;
  std::map<int, double> region_truth;
  for (std::size_t p = 0; p < truth.pixels(); ++p) {
    if (!truth.foreground(p)) continue;
    const int r = truth.region(p);
    ++region_size[r];
    region_truth[r] += tau_m_of(truth.truth_at(p));
  }
  if (region_size.empty()) throw UndefinedInputError("eval: truth dataset has no foreground pixels");

  std::vector<ReportRow> out;
  for (const auto& m : methods) {
    std::map<int, ReportRow> rows;
    for (const auto& [r, n] : region_size) {
      ReportRow row;
      row.method = m.method;
      row.region = r;
      row.truth_tau_m = region_truth[r] / static_cast<double>(n);
      row.seconds_per_pixel = m.seconds_per_pixel;
      rows.emplace(r, std::move(row));
    }
    std::vector<char> seen(truth.pixels(), 0);
    for (const auto& c : m.rows) {
      if (c.x >= truth.width || c.y >= truth.samples * truth.height)
        throw ConfigError("eval." + m.method,
                          "pixel (" + std::to_string(c.x) + ", " + std::to_string(c.y) + ") lies outside the truth dataset");
      const std::size_t p = c.y * truth.width + c.x;
      if (!truth.foreground(p) || truth.region(p) != c.region)
        throw ConfigError("eval." + m.method, "region mismatch at pixel (" + std::to_string(c.x) + ", " +
                                                  std::to_string(c.y) + "): file says " + std::to_string(c.region) +
                                                  ", truth says " + std::to_string(truth.region(p)));
      if (seen[p]) throw ConfigError("eval." + m.method, "pixel listed twice");
      seen[p] = 1;
      if (!std::isfinite(c.tau_m)) continue;
      ReportRow& row = rows.at(c.region);
      const double err = c.tau_m - tau_m_of(truth.truth_at(p));
      row.values.push_back(c.tau_m);
      row.mae += std::fabs(err);
      row.bias += err;
    }
    for (auto& [r, row] : rows) {
      row.pixels = row.values.size();
      row.missing = region_size[r] - row.pixels;
      if (row.pixels == 0) {
        row.tau_m_mean = row.tau_m_std = row.mae = row.bias = std::nan("");
      } else {
        const double n = static_cast<double>(row.pixels);
        double mean = 0;
        for (double v : row.values) mean += v;
        mean /= n;
        double var = 0;
        for (double v : row.values) var += (v - mean) * (v - mean);
        row.tau_m_mean = mean;
        row.tau_m_std = row.pixels > 1 ? std::sqrt(var / (n - 1)) : 0.0;
        row.mae /= n;
        row.bias /= n;
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << kReportCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.method << ',' << r.region << ',' << r.pixels << ',' << r.missing << ',' << num(r.tau_m_mean) << ','
       << num(r.tau_m_std) << ',' << num(r.truth_tau_m) << ',' << num(r.mae) << ',' << num(r.bias) << ','
       << (r.seconds_per_pixel ? num(*r.seconds_per_pixel) : "") << '\n';
}

void write_region_svg(std::ostream& os, int region, const std::vector<ReportRow>& rows) {
  std::vector<const ReportRow*> sel;
  for (const auto& r : rows)
    if (r.region == region) sel.push_back(&r);
  if (sel.empty()) throw ContractError("write_region_svg: no rows for region " + std::to_string(region));

  double lo = sel.front()->truth_tau_m, hi = lo;
  for (const auto* r : sel)
    for (double v : r->values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double pad = std::max(0.05 * (hi - lo), 0.02);
  lo -= pad;
  hi += pad;

  const double left = 70, top = 40, plot_h = 300, slot = 110;
  const double width = left + slot * static_cast<double>(sel.size()) + 20, height = top + plot_h + 60;
  auto ypos = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(width) << "\" height=\"" << coord(height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << coord(width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">Region " << region
     << ": tau_m (ns)</text>\n";
  os << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(top) << "\" x2=\"" << coord(left) << "\" y2=\""
     << coord(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = lo + (hi - lo) * t / 5.0;
    os << "<line x1=\"" << coord(left - 4) << "\" y1=\"" << coord(ypos(v)) << "\" x2=\"" << coord(left) << "\" y2=\""
       << coord(ypos(v)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << coord(left - 8) << "\" y=\"" << coord(ypos(v) + 4) << "\" text-anchor=\"end\">"
       << coord(v) << "</text>\n";
  }
  const double truth = sel.front()->truth_tau_m;
  os << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(ypos(truth)) << "\" x2=\"" << coord(width - 20)
     << "\" y2=\"" << coord(ypos(truth)) << "\" stroke=\"#c0392b\" stroke-dasharray=\"6,4\"/>\n";

  for (std::size_t i = 0; i < sel.size(); ++i) {
    const ReportRow& r = *sel[i];
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    os << "<text x=\"" << coord(cx) << "\" y=\"" << coord(top + plot_h + 20) << "\" text-anchor=\"middle\">"
       << r.method << "</text>\n";
    os << "<text x=\"" << coord(cx) << "\" y=\"" << coord(top + plot_h + 36)
       << "\" text-anchor=\"middle\" font-size=\"10\">n=" << r.pixels << "</text>\n";
    if (r.values.empty()) continue;
    std::vector<double> v = r.values;
    std::sort(v.begin(), v.end());
    const double q05 = quantile_sorted(v, 0.05), q25 = quantile_sorted(v, 0.25), q50 = quantile_sorted(v, 0.5),
                 q75 = quantile_sorted(v, 0.75), q95 = quantile_sorted(v, 0.95);
    const double bw = 36;
    os << "<line x1=\"" << coord(cx) << "\" y1=\"" << coord(ypos(q95)) << "\" x2=\"" << coord(cx) << "\" y2=\""
       << coord(ypos(q05)) << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << coord(cx - bw / 2) << "\" y=\"" << coord(ypos(q75)) << "\" width=\"" << coord(bw)
       << "\" height=\"" << coord(std::max(ypos(q25) - ypos(q75), 0.5))
       << "\" fill=\"#7fb3d5\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << coord(cx - bw / 2) << "\" y1=\"" << coord(ypos(q50)) << "\" x2=\"" << coord(cx + bw / 2)
       << "\" y2=\"" << coord(ypos(q50)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace flilab
