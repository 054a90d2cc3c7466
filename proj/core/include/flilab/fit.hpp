#pragma once

#include <array>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "flilab/histogram.hpp"
#include "flilab/simulate.hpp"

namespace flilab {

enum class DecayModel { mono, bi };

struct ParamBounds {
  double lo = 0;
  double hi = 0;
};

/// Model selection, bounds and starting point for lm_fit.
///
/// Lifetimes are fitted in log space and a_r through a logistic transform, so
/// the bounds below are mapped into those coordinates. NaN entries in the
/// initial guess are derived from the data (amplitude from the peak, baseline
/// from the mean of the last five gates).
struct FitModelSpec {
  DecayModel kind = DecayModel::bi;
  bool fit_offset = true;
  ParamBounds amplitude{0.0, 1e9};
  ParamBounds tau1_ns{0.05, 0.8};
  ParamBounds tau2_ns{0.8, 5.0};
  ParamBounds a_r{0.0, 1.0};
  ParamBounds t0_ps{-400.0, 400.0};
  ParamBounds baseline{-1e6, 1e6};
  double guess_amplitude = std::numeric_limits<double>::quiet_NaN();
  double guess_tau1_ns = 0.5;
  double guess_tau2_ns = 1.1;
  double guess_a_r = 0.5;
  /// NaN aligns the half-maximum rising edges of TPSF and IRF.
  double guess_t0_ps = std::numeric_limits<double>::quiet_NaN();
  double guess_baseline = std::numeric_limits<double>::quiet_NaN();
  std::size_t max_iterations = 200;
  /// Bi-exponential fits also start from a few fixed lifetime pairs and keep
  /// the lowest residual.
  bool multistart = true;
  /// Weights each gate by 1/sqrt(counts + read_variance + 1), approximating
  /// the shot plus read noise variance. Off gives plain least squares.
  bool weighted = true;
  double read_variance = 4.0;

  void validate() const;
  /// Mono-exponential defaults: one lifetime bounded to [0.05, 5] ns.
  static FitModelSpec mono(bool fit_offset);
};

/// Natural-unit parameters of the fit model A [shift(irf, t0) * decay] + c.
struct FitParams {
  double amplitude = 1.0;
  double tau1_ns = 0.5;
  double tau2_ns = 1.0;
  double a_r = 0.5;
  double t0_ps = 0.0;
  double baseline = 0.0;

  LifetimeParams lifetimes() const { return {tau1_ns, tau2_ns, a_r}; }
};

struct FitResult {
  FitParams params;
  double residual_norm = 0;
  std::size_t iterations = 0;
  bool converged = false;
  /// Variance estimates of the free parameters in fit coordinates
  /// (A, log tau1, [log tau2, logit a_r], [t0], c).
  std::vector<double> covariance_diag;
};

/// IRF delayed by t0_ps using linear interpolation between gates; zero outside.
std::vector<double> shift_irf(const TimeHistogram& irf, double t0_ps);

/// A * peak_normalised(shift(irf, t0) * decay) + c.
TimeHistogram forward_fit_model(const FitParams& params, const TimeHistogram& irf);

/// Levenberg–Marquardt least squares of forward_fit_model against `tpsf`.
FitResult lm_fit(const TimeHistogram& tpsf, const TimeHistogram& irf, const FitModelSpec& spec);

/// Centroid difference (TPSF minus IRF) in ns.
double cmm_estimate(const TimeHistogram& tpsf, const TimeHistogram& irf);

enum class FitMethod { nlsf, cmm };
enum class IrfSource { pixel, reference };

struct FitImageOptions {
  FitMethod method = FitMethod::nlsf;
  IrfSource irf_source = IrfSource::reference;
  unsigned threads = 1;
};

struct PixelFit {
  std::size_t pixel = 0;  // flat index into the dataset
  std::size_t x = 0;      // column
  std::size_t y = 0;      // sample * height + row
  int region = 0;
  FitResult fit;
  double tau_m = 0;
  bool ok = false;
  std::string error;
};

struct RegionSummary {
  int region = 0;
  std::size_t pixels = 0;
  double mean_tau_m = 0;
  double std_tau_m = 0;
};

struct FitImageResult {
  FitMethod method = FitMethod::nlsf;
  std::vector<PixelFit> pixels;  // foreground only, ascending pixel index
  std::vector<RegionSummary> regions;
};

/// Independent per-pixel fits over the foreground; background is skipped and a
/// failing pixel is recorded, never fatal.
FitImageResult fit_image(const FliDataset& ds, const FitModelSpec& spec, const FitImageOptions& opts);

/// Mean and sample standard deviation of tau_m per region (ascending region id).
std::vector<RegionSummary> summarize_regions(const std::vector<PixelFit>& pixels);

/// Header: pixel_x,pixel_y,region,tau1,tau2,a_r,t0_ps,tau_m,residual,converged
void write_fit_csv(std::ostream& os, const FitImageResult& result);

struct FitCsvRow {
  std::size_t x = 0, y = 0;
  int region = 0;
  double tau1 = 0, tau2 = 0, a_r = 0, t0_ps = 0, tau_m = 0, residual = 0;
  bool converged = false;
};
std::vector<FitCsvRow> read_fit_csv(std::istream& is);
extern const char* const kFitCsvHeader;

}  // namespace flilab
