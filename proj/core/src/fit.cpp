#include "flilab/fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "flilab/error.hpp"
#include "flilab/parallel.hpp"

namespace flilab {

const char* const kFitCsvHeader = "pixel_x,pixel_y,region,tau1,tau2,a_r,t0_ps,tau_m,residual,converged";

namespace {

constexpr double kLogitClamp = 30.0;

double logistic(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double logit(double p) {
  if (p <= 0) return -kLogitClamp;
  if (p >= 1) return kLogitClamp;
  return std::clamp(std::log(p / (1.0 - p)), -kLogitClamp, kLogitClamp);
}

enum class Slot { amplitude, log_tau1, log_tau2, logit_ar, t0, baseline };

// Maps between the free-parameter vector used by LM and natural parameters.
struct Parametrization {
  std::vector<Slot> slots;
  std::vector<double> lo, hi, scale;
  double fixed_t0 = 0;
  bool mono = false;

  Parametrization(const FitModelSpec& spec, double dt_ps) : mono(spec.kind == DecayModel::mono) {
    auto add = [&](Slot s, double l, double h, double sc) {
      slots.push_back(s);
      lo.push_back(l);
      hi.push_back(h);
      scale.push_back(sc);
    };
    add(Slot::amplitude, spec.amplitude.lo, spec.amplitude.hi, 1.0);
    add(Slot::log_tau1, std::log(spec.tau1_ns.lo), std::log(spec.tau1_ns.hi), 1.0);
    if (!mono) {
      add(Slot::log_tau2, std::log(spec.tau2_ns.lo), std::log(spec.tau2_ns.hi), 1.0);
      add(Slot::logit_ar, logit(spec.a_r.lo), logit(spec.a_r.hi), 1.0);
    }
    if (spec.fit_offset) add(Slot::t0, spec.t0_ps.lo, spec.t0_ps.hi, dt_ps);
    add(Slot::baseline, spec.baseline.lo, spec.baseline.hi, 1.0);
  }

  std::size_t size() const { return slots.size(); }

  FitParams natural(const Eigen::VectorXd& p) const {
    FitParams f;
    f.t0_ps = fixed_t0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const double v = p[static_cast<Eigen::Index>(i)];
      switch (slots[i]) {
        case Slot::amplitude: f.amplitude = v; break;
        case Slot::log_tau1: f.tau1_ns = std::exp(v); break;
        case Slot::log_tau2: f.tau2_ns = std::exp(v); break;
        case Slot::logit_ar: f.a_r = logistic(v); break;
        case Slot::t0: f.t0_ps = v; break;
        case Slot::baseline: f.baseline = v; break;
      }
    }
    if (mono) {
      f.tau2_ns = f.tau1_ns;
      f.a_r = 1.0;
    }
    return f;
  }

  Eigen::VectorXd encode(const FitParams& f) const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < slots.size(); ++i) {
      double v = 0;
      switch (slots[i]) {
        case Slot::amplitude: v = f.amplitude; break;
        case Slot::log_tau1: v = std::log(f.tau1_ns); break;
        case Slot::log_tau2: v = std::log(f.tau2_ns); break;
        case Slot::logit_ar: v = logit(f.a_r); break;
        case Slot::t0: v = f.t0_ps; break;
        case Slot::baseline: v = f.baseline; break;
      }
      p[static_cast<Eigen::Index>(i)] = v;
    }
    return clip(p);
  }

  Eigen::VectorXd clip(Eigen::VectorXd p) const {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      p[i] = std::clamp(p[i], lo[static_cast<std::size_t>(i)], hi[static_cast<std::size_t>(i)]);
    return p;
  }

  double step_size(Eigen::Index i, double v) const { return 1e-4 * std::max(scale[static_cast<std::size_t>(i)], std::abs(v)); }
};

// Peak-normalised convolution of the shifted IRF with the bi-exponential decay.
// Uses the first-order recursion s[n] = q s[n-1] + irf[n], which equals the
// direct causal sum for exponential kernels.
void model_shape(const std::vector<double>& irf_shifted, double dt_ps, const FitParams& f, std::vector<double>& out) {
  const std::size_t g = irf_shifted.size();
  out.resize(g);
  const double q1 = std::exp(-dt_ps * 1e-3 / f.tau1_ns);
  const double q2 = std::exp(-dt_ps * 1e-3 / f.tau2_ns);
  double s1 = 0, s2 = 0, peak = 0;
  for (std::size_t n = 0; n < g; ++n) {
    s1 = s1 * q1 + irf_shifted[n];
    s2 = s2 * q2 + irf_shifted[n];
    out[n] = (f.a_r * s1 + (1.0 - f.a_r) * s2) * dt_ps;
    peak = std::max(peak, out[n]);
  }
  if (peak > 0)
    for (double& v : out) v /= peak;
}

class ResidualModel {
 public:
  ResidualModel(const TimeHistogram& tpsf, const TimeHistogram& irf, const Parametrization& param, double read_variance)
      : tpsf_(tpsf), irf_(irf), param_(param), weight_(tpsf.size(), 1.0) {
    if (read_variance >= 0)
      for (std::size_t n = 0; n < weight_.size(); ++n)
        weight_[n] = 1.0 / std::sqrt(std::max(tpsf.counts[n], 0.0) + read_variance + 1.0);
  }

  // r = model - data; returns the sum of squares.
  double residuals(const Eigen::VectorXd& p, Eigen::VectorXd& r) {
    const FitParams f = param_.natural(p);
    if (f.t0_ps != cached_t0_ || shifted_.empty()) {
      shifted_ = shift_irf(irf_, f.t0_ps);
      cached_t0_ = f.t0_ps;
    }
    model_shape(shifted_, irf_.axis.dt_ps, f, shape_);
    const auto g = static_cast<Eigen::Index>(shape_.size());
    r.resize(g);
    for (Eigen::Index n = 0; n < g; ++n)
      r[n] = weight_[static_cast<std::size_t>(n)] *
             (f.amplitude * shape_[static_cast<std::size_t>(n)] + f.baseline - tpsf_.counts[static_cast<std::size_t>(n)]);
    return r.squaredNorm();
  }

  void jacobian(const Eigen::VectorXd& p, Eigen::MatrixXd& j) {
    const auto np = p.size();
    j.resize(static_cast<Eigen::Index>(tpsf_.size()), np);
    Eigen::VectorXd plus, minus;
    for (Eigen::Index i = 0; i < np; ++i) {
      const double h = param_.step_size(i, p[i]);
      Eigen::VectorXd q = p;
      q[i] = p[i] + h;
      residuals(q, plus);
      q[i] = p[i] - h;
      residuals(q, minus);
      j.col(i) = (plus - minus) / (2.0 * h);
    }
  }

 private:
  const TimeHistogram& tpsf_;
  const TimeHistogram& irf_;
  const Parametrization& param_;
  std::vector<double> weight_;
  std::vector<double> shifted_, shape_;
  double cached_t0_ = std::numeric_limits<double>::quiet_NaN();
};

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Time at which the histogram first climbs to half of its peak above
// `baseline`, linearly interpolated between gates.
double rise_time_ps(const TimeHistogram& h, double baseline) {
  const double half = baseline + 0.5 * (h.peak() - baseline);
  for (std::size_t n = 1; n < h.size(); ++n) {
    if (h.counts[n] >= half) {
      const double a = h.counts[n - 1], b = h.counts[n];
      const double w = b > a ? (half - a) / (b - a) : 0.0;
      return h.axis.time_ps(n - 1) + std::clamp(w, 0.0, 1.0) * h.axis.dt_ps;
    }
  }
  return h.axis.time_ps(0);
}

FitResult lm_run(const TimeHistogram& tpsf, const TimeHistogram& irf, const FitModelSpec& spec,
                 const Parametrization& param, const FitParams& start, double& final_cost);

}  // namespace

void FitModelSpec::validate() const {
  auto check = [](const ParamBounds& b, const char* name) {
    if (!std::isfinite(b.lo) || !std::isfinite(b.hi) || !(b.lo < b.hi))
      throw ConfigError(std::string("fit.") + name, "bounds must be finite with lo < hi");
  };
  check(amplitude, "amplitude");
  check(tau1_ns, "tau1_ns");
  check(tau2_ns, "tau2_ns");
  check(a_r, "a_r");
  check(t0_ps, "t0_ps");
  check(baseline, "baseline");
  if (!(tau1_ns.lo > 0) || !(tau2_ns.lo > 0)) throw ConfigError("fit.tau1_ns", "lifetime bounds must be positive");
  if (kind == DecayModel::bi && tau1_ns.hi > tau2_ns.lo)
    throw ConfigError("fit.tau1_ns", "bi-exponential bounds must keep tau1 <= tau2");
  if (a_r.lo < 0 || a_r.hi > 1) throw ConfigError("fit.a_r", "bounds must lie within [0, 1]");
  if (max_iterations == 0) throw ConfigError("fit.max_iterations", "must be positive");
}

FitModelSpec FitModelSpec::mono(bool fit_offset) {
  FitModelSpec s;
  s.kind = DecayModel::mono;
  s.fit_offset = fit_offset;
  s.tau1_ns = {0.05, 5.0};
  s.guess_tau1_ns = 1.0;
  return s;
}

std::vector<double> shift_irf(const TimeHistogram& irf, double t0_ps) {
  const std::size_t g = irf.size();
  std::vector<double> out(g, 0.0);
  const double shift = t0_ps / irf.axis.dt_ps;
  for (std::size_t n = 0; n < g; ++n) {
    const double src = static_cast<double>(n) - shift;
    const double fl = std::floor(src);
    const double w = src - fl;
    const auto i0 = static_cast<long long>(fl);
    auto at = [&](long long i) { return (i >= 0 && i < static_cast<long long>(g)) ? irf.counts[static_cast<std::size_t>(i)] : 0.0; };
    out[n] = w == 0.0 ? at(i0) : (1.0 - w) * at(i0) + w * at(i0 + 1);
  }
  return out;
}

TimeHistogram forward_fit_model(const FitParams& params, const TimeHistogram& irf) {
  TimeHistogram out(irf.axis);
  std::vector<double> shape;
  model_shape(shift_irf(irf, params.t0_ps), irf.axis.dt_ps, params, shape);
  for (std::size_t n = 0; n < shape.size(); ++n) out.counts[n] = params.amplitude * shape[n] + params.baseline;
  return out;
}

FitResult lm_fit(const TimeHistogram& tpsf, const TimeHistogram& irf, const FitModelSpec& spec) {
  spec.validate();
  if (!(tpsf.axis == irf.axis) || tpsf.size() != irf.size()) throw DimensionError("lm_fit: TPSF and IRF axes differ");
  const std::size_t g = tpsf.size();

  Parametrization param(spec, irf.axis.dt_ps);

  FitParams start;
  {
    double tail = 0;
    const std::size_t k = std::min<std::size_t>(5, g);
    for (std::size_t n = g - k; n < g; ++n) tail += tpsf.counts[n];
    tail /= static_cast<double>(k);
    start.baseline = std::isnan(spec.guess_baseline) ? tail : spec.guess_baseline;
    const double amp = tpsf.peak() - start.baseline;
    start.amplitude = std::isnan(spec.guess_amplitude) ? (amp > 0 ? amp : 1.0) : spec.guess_amplitude;
    start.tau1_ns = spec.guess_tau1_ns;
    start.tau2_ns = spec.guess_tau2_ns;
    start.a_r = spec.guess_a_r;
    start.t0_ps = 0.0;
    if (spec.fit_offset) {
      start.t0_ps = std::isnan(spec.guess_t0_ps) ? std::clamp(rise_time_ps(tpsf, start.baseline) - rise_time_ps(irf, 0.0),
                                                              spec.t0_ps.lo, spec.t0_ps.hi)
                                                 : spec.guess_t0_ps;
    }
  }

  std::vector<FitParams> starts{start};
  if (spec.multistart && spec.kind == DecayModel::bi) {
    for (const auto& [t1, t2, ar] : {std::array<double, 3>{0.3, 1.0, 0.3}, std::array<double, 3>{0.3, 1.3, 0.7},
                                     std::array<double, 3>{0.65, 1.1, 0.5}}) {
      FitParams alt = start;
      alt.tau1_ns = std::clamp(t1, spec.tau1_ns.lo, spec.tau1_ns.hi);
      alt.tau2_ns = std::clamp(t2, spec.tau2_ns.lo, spec.tau2_ns.hi);
      alt.a_r = ar;
      starts.push_back(alt);
    }
  }

  FitResult best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& s0 : starts) {
    double cost = 0;
    FitResult r = lm_run(tpsf, irf, spec, param, s0, cost);
    if (cost < best_cost) {
      best_cost = cost;
      best = std::move(r);
    }
  }
  return best;
}

namespace {

FitResult lm_run(const TimeHistogram& tpsf, const TimeHistogram& irf, const FitModelSpec& spec,
                 const Parametrization& param, const FitParams& start, double& final_cost) {
  const std::size_t g = tpsf.size();
  ResidualModel model(tpsf, irf, param, spec.weighted ? spec.read_variance : -1.0);
  Eigen::VectorXd p = param.encode(start);
  Eigen::VectorXd r, r_trial;
  double cost = model.residuals(p, r);
  double damping = 1e-3;

  FitResult result;
  Eigen::MatrixXd j;
  Eigen::MatrixXd normal;
  const auto np = static_cast<Eigen::Index>(param.size());

  for (std::size_t it = 0; it < spec.max_iterations && !result.converged; ++it) {
    result.iterations = it + 1;
    if (cost == 0.0) {
      result.converged = true;
      break;
    }
    model.jacobian(p, j);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd jtr = j.transpose() * r;
    const double dmax = jtj.diagonal().maxCoeff();

    for (int inner = 0; inner < 40; ++inner) {
      normal = jtj;
      for (Eigen::Index i = 0; i < np; ++i) normal(i, i) += damping * std::max(jtj(i, i), 1e-12 * dmax + 1e-300);
      const Eigen::VectorXd delta = normal.ldlt().solve(-jtr);
      if (!delta.allFinite()) {
        damping *= 10;
        continue;
      }
      const Eigen::VectorXd trial = param.clip(p + delta);
      double rel = 0;
      for (Eigen::Index i = 0; i < np; ++i)
        rel = std::max(rel, std::abs(trial[i] - p[i]) / std::max(param.scale[static_cast<std::size_t>(i)], std::abs(p[i])));
      if (rel < 1e-8) {
        result.converged = true;
        break;
      }
      const double trial_cost = model.residuals(trial, r_trial);
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        p = trial;
        r = r_trial;
        cost = trial_cost;
        damping = std::max(damping / 10.0, 1e-12);
        break;
      }
      damping *= 10;
    }
  }

  result.params = param.natural(p);
  result.residual_norm = std::sqrt(cost);
  // Variance estimate from the damped normal equations at the solution.
  model.jacobian(p, j);
  Eigen::MatrixXd jtj = j.transpose() * j;
  const double dmax = jtj.diagonal().maxCoeff();
  for (Eigen::Index i = 0; i < np; ++i) jtj(i, i) += damping * std::max(jtj(i, i), 1e-12 * dmax + 1e-300);
  const double dof = static_cast<double>(g > param.size() ? g - param.size() : 1);
  const Eigen::MatrixXd inv = jtj.ldlt().solve(Eigen::MatrixXd::Identity(np, np));
  result.covariance_diag.resize(param.size());
  for (Eigen::Index i = 0; i < np; ++i) result.covariance_diag[static_cast<std::size_t>(i)] = inv(i, i) * cost / dof;
  final_cost = cost;
  return result;
}

}  // namespace

double cmm_estimate(const TimeHistogram& tpsf, const TimeHistogram& irf) {
  if (!(tpsf.axis == irf.axis)) throw DimensionError("cmm_estimate: TPSF and IRF axes differ");
  return (tpsf.centroid_ps() - irf.centroid_ps()) * 1e-3;
}

std::vector<RegionSummary> summarize_regions(const std::vector<PixelFit>& pixels) {
  std::map<int, std::vector<double>> by_region;
  for (const auto& p : pixels)
    if (p.ok) by_region[p.region].push_back(p.tau_m);
  std::vector<RegionSummary> out;
  for (const auto& [region, values] : by_region) {
    RegionSummary s;
    s.region = region;
    s.pixels = values.size();
    double m = 0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    double ss = 0;
    for (double v : values) ss += (v - m) * (v - m);
    s.mean_tau_m = m;
    s.std_tau_m = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    out.push_back(s);
  }
  return out;
}

FitImageResult fit_image(const FliDataset& ds, const FitModelSpec& spec, const FitImageOptions& opts) {
  ds.validate();
  if (opts.method == FitMethod::nlsf) spec.validate();
  TimeHistogram reference;
  if (opts.irf_source == IrfSource::reference) {
    if (!ds.has_config) throw ConfigError("fit.irf_source", "dataset has no generation config, use the pixel IRF");
    reference = make_irf(ds.config.reference_irf(), ds.axis);
  }

  FitImageResult result;
  result.method = opts.method;
  for (std::size_t px = 0; px < ds.pixels(); ++px) {
    if (!ds.foreground(px)) continue;
    PixelFit pf;
    pf.pixel = px;
    pf.x = px % ds.width;
    pf.y = px / ds.width;
    pf.region = ds.region(px);
    result.pixels.push_back(pf);
  }

  parallel_for(result.pixels.size(), opts.threads, [&](std::size_t i) {
    PixelFit& pf = result.pixels[i];
    try {
      const TimeHistogram tpsf = ds.tpsf_at(pf.pixel);
      const TimeHistogram irf = opts.irf_source == IrfSource::reference ? reference : ds.irf_at(pf.pixel);
      if (opts.method == FitMethod::cmm) {
        pf.tau_m = cmm_estimate(tpsf, irf);
        pf.fit.converged = true;
      } else {
        pf.fit = lm_fit(tpsf, irf, spec);
        pf.tau_m = mean_lifetime(pf.fit.params.lifetimes());
      }
      pf.ok = std::isfinite(pf.tau_m);
      if (!pf.ok) pf.error = "non-finite lifetime";
    } catch (const std::exception& e) {
      pf.ok = false;
      pf.error = e.what();
    }
  });
  result.regions = summarize_regions(result.pixels);
  return result;
}

void write_fit_csv(std::ostream& os, const FitImageResult& result) {
  os << kFitCsvHeader << '\n';
  const bool cmm = result.method == FitMethod::cmm;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : result.pixels) {
    const auto& f = p.fit.params;
    os << p.x << ',' << p.y << ',' << p.region << ',' << fmt(cmm || !p.ok ? nan : f.tau1_ns) << ','
       << fmt(cmm || !p.ok ? nan : f.tau2_ns) << ',' << fmt(cmm || !p.ok ? nan : f.a_r) << ','
       << fmt(cmm || !p.ok ? nan : f.t0_ps) << ',' << fmt(p.ok ? p.tau_m : nan) << ','
       << fmt(cmm || !p.ok ? nan : p.fit.residual_norm) << ',' << (p.ok && p.fit.converged ? 1 : 0) << '\n';
  }
}

std::vector<FitCsvRow> read_fit_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(FormatErrorCode::truncated, "empty fit CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kFitCsvHeader) throw FormatError(FormatErrorCode::bad_magic, "unexpected fit CSV header: " + line);
  std::vector<FitCsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 10)
      throw FormatError(FormatErrorCode::shape_mismatch, "fit CSV line " + std::to_string(lineno) + " has " +
                                                             std::to_string(cells.size()) + " fields");
    auto num = [](const std::string& s) { return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s); };
    FitCsvRow r;
    r.x = std::stoul(cells[0]);
    r.y = std::stoul(cells[1]);
    r.region = std::stoi(cells[2]);
    r.tau1 = num(cells[3]);
    r.tau2 = num(cells[4]);
    r.a_r = num(cells[5]);
    r.t0_ps = num(cells[6]);
    r.tau_m = num(cells[7]);
    r.residual = num(cells[8]);
    r.converged = cells[9] == "1";
    rows.push_back(r);
  }
  return rows;
}

}  // namespace flilab
