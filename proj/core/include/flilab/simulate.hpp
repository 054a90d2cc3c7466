#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flilab/histogram.hpp"
#include "flilab/rng.hpp"

namespace flilab {

/// Gaussian laser pulse convolved with the rectangular gate window.
struct IrfModel {
  double fwhm_ps = 150.0;
  double gate_width_ps = 300.0;
  /// Position of the pulse centre on the gate axis.
  double delay_ps = 0.0;

  void validate() const;
};

struct NoiseModel {
  double read_sigma = 2.0;   // Gaussian read noise, counts
  double dark_offset = 1.0;  // constant dark level, counts
};

struct Range {
  double lo = 0;
  double hi = 0;
  bool operator==(const Range&) const = default;
};

/// Axis-aligned pixel rectangle.
struct Rect {
  std::size_t row = 0, col = 0, rows = 0, cols = 0;
  bool overlaps(const Rect& o) const noexcept;
  bool operator==(const Rect&) const = default;
};

/// Step-ladder phantom: one rectangular region per step height.
///
/// A raised step sits closer to the detector, so its photons arrive
/// `height * slope` earlier than at ground level.
struct PhantomScene {
  std::vector<double> heights_mm{0, 5, 10, 15, 20};
  double slope_ps_per_mm = 8.0;
  LifetimeParams embedding{0.5, 1.2, 0.3};
  /// Empty means the default side-by-side layout for the configured image size.
  std::vector<Rect> regions;
  Range peak_counts{1000, 2000};

  std::vector<double> delays_ps() const;
  std::vector<Rect> layout(std::size_t image_side) const;
  void validate(std::size_t image_side) const;
};

enum class SceneKind { strokes, phantom };
enum class ParamMode { per_shape, per_pixel };

struct SimulationConfig {
  SceneKind scene = SceneKind::strokes;
  std::size_t samples = 16;
  std::size_t image_side = 28;
  TimeAxis axis{176, 40.0, -640.0};
  Range tau1_ns{0.2, 0.8};
  Range tau2_ns{0.8, 1.5};
  Range a_r{0.0, 1.0};
  Range peak_counts{100, 2000};
  /// Per-pixel arrival advance relative to the reference IRF.
  Range delay_ps{0, 160};
  IrfModel irf{};
  /// Where the zero-delay (ground-level) IRF is centred on the axis.
  double irf_center_ps = 0.0;
  NoiseModel noise{};
  ParamMode params = ParamMode::per_shape;
  /// Optional MNIST-style IDX image file used for foreground masks.
  std::string mask_idx_path;
  double mask_threshold = 0.5;
  PhantomScene phantom{};

  void validate() const;
  std::size_t pixel_signals() const noexcept { return samples * image_side * image_side; }
  /// The zero-delay IRF every pixel would see on a flat, ground-level sample.
  IrfModel reference_irf() const;
};

/// Stack of simulated (or loaded) per-pixel histograms with ground truth.
///
/// Layouts are row-major: histograms [N, H, W, G], maps [N, H, W]. The mask
/// holds 0 for background and region + 1 for foreground pixels.
struct FliDataset {
  std::size_t samples = 0, height = 0, width = 0;
  TimeAxis axis{};
  std::vector<float> tpsf;
  std::vector<float> irf;
  std::vector<float> tau1, tau2, a_r;
  std::vector<float> mask;
  bool has_config = false;
  SimulationConfig config{};
  std::uint64_t seed = 0;

  std::size_t gates() const noexcept { return axis.gates; }
  std::size_t pixels() const noexcept { return samples * height * width; }
  bool has_truth() const noexcept { return !tau1.empty(); }
  bool has_mask() const noexcept { return !mask.empty(); }
  bool foreground(std::size_t pixel) const noexcept { return !has_mask() || mask[pixel] > 0; }
  /// Region id of a foreground pixel (mask value - 1), or -1 for background.
  int region(std::size_t pixel) const noexcept;

  TimeHistogram tpsf_at(std::size_t pixel) const;
  TimeHistogram irf_at(std::size_t pixel) const;
  LifetimeParams truth_at(std::size_t pixel) const;

  /// Throws DimensionError when stack sizes disagree with the header fields.
  void validate() const;
};

/// Decay sampled at lags n * dt: a_r e^{-t/tau1} + (1 - a_r) e^{-t/tau2}.
TimeHistogram biexp_decay(const LifetimeParams& p, const TimeAxis& axis);

/// Peak-normalised IRF sampled at the gate times of `axis`.
TimeHistogram make_irf(const IrfModel& m, const TimeAxis& axis);

/// Causal discrete convolution sum_{k<=n} irf[k] decay[n-k] dt, truncated to
/// the axis and peak-normalised.
TimeHistogram convolve(const TimeHistogram& irf, const TimeHistogram& decay);

/// Scales to `peak_counts`, draws Poisson shot noise, adds the dark offset and
/// Gaussian read noise, then clamps at zero.
TimeHistogram add_noise(const TimeHistogram& h, double peak_counts, CounterRng& rng,
                        const NoiseModel& noise = {});

FliDataset generate_dataset(const SimulationConfig& cfg, std::uint64_t seed, unsigned threads = 1);
FliDataset make_phantom(const SimulationConfig& cfg, std::uint64_t seed, unsigned threads = 1);
/// Dispatches on cfg.scene.
FliDataset simulate(const SimulationConfig& cfg, std::uint64_t seed, unsigned threads = 1);

/// Replaces every pixel IRF with cfg.reference_irf(), as seen by an
/// instrument that ignores depth-of-field shifts.
FliDataset with_reference_irf(const FliDataset& ds);

/// Procedural handwritten-stroke mask (1 = foreground), side x side.
std::vector<std::uint8_t> stroke_mask(std::size_t side, CounterRng& rng);

/// Reads an IDX3 unsigned-byte image file (the MNIST format) and thresholds
/// each image at `threshold * 255`.
std::vector<std::vector<std::uint8_t>> read_idx_masks(const std::string& path, std::size_t max_images,
                                                      double threshold, std::size_t* side_out = nullptr);

}  // namespace flilab
