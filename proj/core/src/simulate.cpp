#include "flilab/simulate.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "flilab/error.hpp"
#include "flilab/parallel.hpp"

namespace flilab {
namespace {

constexpr double kFwhmToSigma = 1.0 / 2.3548200450309493;  // 2 sqrt(2 ln 2)

void check_range(const Range& r, const std::string& field, double min_allowed, double max_allowed) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) throw ConfigError(field, "range bounds must be finite");
  if (r.lo > r.hi) throw ConfigError(field, "min > max");
  if (r.lo < min_allowed || r.hi > max_allowed)
    throw ConfigError(field, "range must lie within [" + std::to_string(min_allowed) + ", " +
                                 std::to_string(max_allowed) + "]");
}

// Noiseless, peak-normalised TPSF for one pixel.
std::vector<double> noiseless_tpsf(const LifetimeParams& p, const TimeHistogram& irf) {
  return convolve(irf, biexp_decay(p, irf.axis)).counts;
}

void store(std::vector<float>& dst, std::size_t offset, const std::vector<double>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[offset + i] = static_cast<float>(src[i]);
}

FliDataset empty_dataset(const SimulationConfig& cfg, std::uint64_t seed) {
  FliDataset ds;
  ds.samples = cfg.samples;
  ds.height = ds.width = cfg.image_side;
  ds.axis = cfg.axis;
  const std::size_t px = ds.pixels();
  ds.tpsf.assign(px * cfg.axis.gates, 0.0f);
  ds.irf.assign(px * cfg.axis.gates, 0.0f);
  ds.tau1.assign(px, 0.0f);
  ds.tau2.assign(px, 0.0f);
  ds.a_r.assign(px, 0.0f);
  ds.mask.assign(px, 0.0f);
  ds.has_config = true;
  ds.config = cfg;
  ds.seed = seed;
  return ds;
}

// Stream ids: pixel streams use the flat pixel index; scene-level streams
// live far above any realistic pixel count.
constexpr std::uint64_t kSceneStream = 1ULL << 62;

struct PixelSpec {
  LifetimeParams params;
  double delay_ps = 0;
  double peak = 0;
  bool foreground = false;
};

void render_pixel(FliDataset& ds, std::size_t pixel, const PixelSpec& spec, CounterRng& rng) {
  const auto& cfg = ds.config;
  const std::size_t g = cfg.axis.gates;
  IrfModel irf_model = cfg.irf;
  irf_model.delay_ps = cfg.irf_center_ps - spec.delay_ps;
  const TimeHistogram irf = make_irf(irf_model, cfg.axis);
  store(ds.irf, pixel * g, irf.counts);
  TimeHistogram clean(cfg.axis);
  if (spec.foreground) {
    clean.counts = noiseless_tpsf(spec.params, irf);
    ds.tau1[pixel] = static_cast<float>(spec.params.tau1_ns);
    ds.tau2[pixel] = static_cast<float>(spec.params.tau2_ns);
    ds.a_r[pixel] = static_cast<float>(spec.params.a_r);
  }
  store(ds.tpsf, pixel * g, add_noise(clean, spec.foreground ? spec.peak : 1.0, rng, cfg.noise).counts);
}

}  // namespace

void IrfModel::validate() const {
  if (!(fwhm_ps > 0)) throw ConfigError("irf.fwhm_ps", "must be positive");
  if (!(gate_width_ps > 0)) throw ConfigError("irf.gate_width_ps", "must be positive");
  if (!std::isfinite(delay_ps)) throw ConfigError("irf.delay_ps", "must be finite");
}

bool Rect::overlaps(const Rect& o) const noexcept {
  return row < o.row + o.rows && o.row < row + rows && col < o.col + o.cols && o.col < col + cols;
}

std::vector<double> PhantomScene::delays_ps() const {
  std::vector<double> d;
  d.reserve(heights_mm.size());
  for (double h : heights_mm) d.push_back(h * slope_ps_per_mm);
  return d;
}

std::vector<Rect> PhantomScene::layout(std::size_t side) const {
  if (!regions.empty()) return regions;
  // Equal-width columns separated by one background column, 2-pixel margin.
  const std::size_t k = heights_mm.size();
  std::vector<Rect> out;
  if (k == 0 || side < 2 * k + 3) return out;
  const std::size_t usable = side - 4 - (k - 1);
  const std::size_t w = std::max<std::size_t>(1, usable / k);
  const std::size_t rows = side - 8 > 0 ? side - 8 : 1;
  for (std::size_t i = 0; i < k; ++i) out.push_back(Rect{4, 2 + i * (w + 1), rows, w});
  return out;
}

void PhantomScene::validate(std::size_t side) const {
  if (heights_mm.empty()) throw ConfigError("simulate.phantom.heights_mm", "need at least one step");
  for (double h : heights_mm)
    if (!std::isfinite(h) || h < 0) throw ConfigError("simulate.phantom.heights_mm", "heights must be >= 0");
  if (!std::isfinite(slope_ps_per_mm)) throw ConfigError("simulate.phantom.slope_ps_per_mm", "must be finite");
  try {
    embedding.validate();
  } catch (const ContractError& e) {
    throw ConfigError("simulate.phantom.embedding", e.what());
  }
  check_range(peak_counts, "simulate.phantom.peak_counts", 1e-9, 1e12);
  const auto rects = layout(side);
  if (rects.size() != heights_mm.size())
    throw ConfigError("simulate.phantom.regions", "need one region per step height");
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const auto& r = rects[i];
    if (r.rows == 0 || r.cols == 0 || r.row + r.rows > side || r.col + r.cols > side)
      throw ConfigError("simulate.phantom.regions", "region " + std::to_string(i) + " lies outside the image");
    for (std::size_t j = 0; j < i; ++j)
      if (r.overlaps(rects[j]))
        throw ConfigError("simulate.phantom.regions",
                          "regions " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
  }
}

void SimulationConfig::validate() const {
  if (samples == 0) throw ConfigError("simulate.samples", "must be positive");
  if (image_side == 0) throw ConfigError("simulate.image_side", "must be positive");
  try {
    axis.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("simulate.axis." + e.field(), "invalid axis");
  }
  check_range(tau1_ns, "simulate.tau1_ns", 1e-6, 1e3);
  check_range(tau2_ns, "simulate.tau2_ns", 1e-6, 1e3);
  check_range(a_r, "simulate.a_r", 0.0, 1.0);
  check_range(peak_counts, "simulate.peak_counts", 1e-9, 1e12);
  check_range(delay_ps, "simulate.delay_ps", -1e6, 1e6);
  if (tau1_ns.hi > tau2_ns.lo) throw ConfigError("simulate.tau1_ns", "tau1 range must not exceed tau2 range");
  try {
    irf.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("simulate." + e.field(), "must be positive");
  }
  if (!(noise.read_sigma >= 0)) throw ConfigError("simulate.noise.read_sigma", "must be >= 0");
  if (!(noise.dark_offset >= 0)) throw ConfigError("simulate.noise.dark_offset", "must be >= 0");
  if (!(mask_threshold >= 0 && mask_threshold <= 1)) throw ConfigError("simulate.mask_threshold", "must lie in [0, 1]");
  if (scene == SceneKind::phantom) phantom.validate(image_side);
}

IrfModel SimulationConfig::reference_irf() const {
  IrfModel m = irf;
  m.delay_ps = irf_center_ps;
  return m;
}

int FliDataset::region(std::size_t pixel) const noexcept {
  if (!has_mask()) return 0;
  return mask[pixel] > 0 ? static_cast<int>(std::lround(mask[pixel])) - 1 : -1;
}

TimeHistogram FliDataset::tpsf_at(std::size_t pixel) const {
  const std::size_t g = gates();
  TimeHistogram h(axis);
  for (std::size_t n = 0; n < g; ++n) h.counts[n] = tpsf[pixel * g + n];
  return h;
}

TimeHistogram FliDataset::irf_at(std::size_t pixel) const {
  const std::size_t g = gates();
  TimeHistogram h(axis);
  for (std::size_t n = 0; n < g; ++n) h.counts[n] = irf[pixel * g + n];
  return h;
}

LifetimeParams FliDataset::truth_at(std::size_t pixel) const {
  if (!has_truth()) throw StateError("dataset has no ground truth");
  return {tau1[pixel], tau2[pixel], a_r[pixel]};
}

void FliDataset::validate() const {
  const std::size_t px = pixels();
  if (px == 0) throw DimensionError("dataset has no pixels");
  if (tpsf.size() != px * gates() || irf.size() != px * gates())
    throw DimensionError("histogram stacks do not match N*H*W*G");
  if (has_truth() && (tau1.size() != px || tau2.size() != px || a_r.size() != px))
    throw DimensionError("ground-truth maps do not match N*H*W");
  if (has_mask() && mask.size() != px) throw DimensionError("mask does not match N*H*W");
}

TimeHistogram biexp_decay(const LifetimeParams& p, const TimeAxis& axis) {
  TimeHistogram h(axis);
  for (std::size_t n = 0; n < axis.gates; ++n) {
    const double t_ns = axis.dt_ps * static_cast<double>(n) * 1e-3;
    h.counts[n] = p.a_r * std::exp(-t_ns / p.tau1_ns) + (1.0 - p.a_r) * std::exp(-t_ns / p.tau2_ns);
  }
  return h;
}

TimeHistogram make_irf(const IrfModel& m, const TimeAxis& axis) {
  m.validate();
  const double sigma = m.fwhm_ps * kFwhmToSigma;
  const double half = 0.5 * m.gate_width_ps;
  const double inv = 1.0 / (sigma * std::sqrt(2.0));
  TimeHistogram h(axis);
  for (std::size_t n = 0; n < axis.gates; ++n) {
    const double u = axis.time_ps(n) - m.delay_ps;
    h.counts[n] = 0.5 * (std::erf((u + half) * inv) - std::erf((u - half) * inv));
  }
  // Fraction of the continuous pulse inside the sampled window.
  const double lo = axis.time_ps(0) - 0.5 * axis.dt_ps - m.delay_ps;
  const double hi = axis.time_ps(axis.gates - 1) + 0.5 * axis.dt_ps - m.delay_ps;
  auto cdf = [&](double u) {
    // Integral of the gate-smoothed pulse, normalised to total mass gate_width.
    auto prim = [&](double x) {
      const double z = x * inv;
      return x * std::erf(z) + std::exp(-z * z) / (inv * std::sqrt(M_PI));
    };
    return 0.5 * (prim(u + half) - prim(u - half)) / m.gate_width_ps;
  };
  const double inside = cdf(hi) - cdf(lo);
  h.clipped = inside < 0.75;
  peak_normalize(h.counts);
  return h;
}

TimeHistogram convolve(const TimeHistogram& irf, const TimeHistogram& decay) {
  if (!(irf.axis == decay.axis) || irf.size() != decay.size())
    throw DimensionError("convolve: IRF and decay axes differ");
  const std::size_t g = irf.size();
  TimeHistogram out(irf.axis);
  const double dt = irf.axis.dt_ps;
  for (std::size_t n = 0; n < g; ++n) {
    double s = 0;
    for (std::size_t k = 0; k <= n; ++k) s += irf.counts[k] * decay.counts[n - k];
    out.counts[n] = s * dt;
  }
  peak_normalize(out.counts);
  return out;
}

TimeHistogram add_noise(const TimeHistogram& h, double peak_counts, CounterRng& rng, const NoiseModel& noise) {
  if (!(peak_counts > 0)) throw ContractError("add_noise: peak_counts must be positive");
  const double peak = h.peak();
  const double gain = peak > 0 ? peak_counts / peak : 0.0;
  std::normal_distribution<double> read(0.0, 1.0);
  TimeHistogram out(h.axis);
  for (std::size_t n = 0; n < h.size(); ++n) {
    const double mean = h.counts[n] * gain;
    double v = 0;
    if (mean > 0) {
      std::poisson_distribution<long long> shot(mean);
      v = static_cast<double>(shot(rng));
    }
    v += noise.dark_offset + noise.read_sigma * read(rng);
    out.counts[n] = std::max(0.0, v);
  }
  return out;
}

std::vector<std::uint8_t> stroke_mask(std::size_t side, CounterRng& rng) {
  std::vector<std::uint8_t> m(side * side, 0);
  const double s = static_cast<double>(side);
  auto stamp = [&](double cx, double cy, double radius) {
    const long r0 = std::lround(std::floor(cy - radius)), r1 = std::lround(std::ceil(cy + radius));
    const long c0 = std::lround(std::floor(cx - radius)), c1 = std::lround(std::ceil(cx + radius));
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) {
        if (r < 0 || c < 0 || r >= static_cast<long>(side) || c >= static_cast<long>(side)) continue;
        const double dx = static_cast<double>(c) - cx, dy = static_cast<double>(r) - cy;
        if (dx * dx + dy * dy <= radius * radius) m[static_cast<std::size_t>(r) * side + static_cast<std::size_t>(c)] = 1;
      }
  };
  std::size_t filled = 0;
  for (int attempt = 0; attempt < 8 && filled < side * side / 12; ++attempt) {
    const int strokes = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < strokes; ++k) {
      // A pen stroke: random start, heading and curvature, drawn as discs.
      double x = rng.uniform(0.25 * s, 0.75 * s), y = rng.uniform(0.2 * s, 0.8 * s);
      double heading = rng.uniform(0.0, 2.0 * M_PI);
      const double curvature = rng.uniform(-0.25, 0.25);
      const double radius = rng.uniform(0.045 * s, 0.075 * s);
      const int steps = static_cast<int>(rng.uniform(0.3 * s, 0.7 * s));
      for (int t = 0; t < steps; ++t) {
        stamp(x, y, radius);
        heading += curvature;
        x = std::clamp(x + std::cos(heading), 2.0, s - 3.0);
        y = std::clamp(y + std::sin(heading), 2.0, s - 3.0);
      }
    }
    filled = 0;
    for (auto v : m) filled += v;
  }
  return m;
}

std::vector<std::vector<std::uint8_t>> read_idx_masks(const std::string& path, std::size_t max_images,
                                                      double threshold, std::size_t* side_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file " + path);
  auto be32 = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(FormatErrorCode::truncated, "IDX header in " + path);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  };
  const std::uint32_t magic = be32();
  if (magic != 0x00000803u) throw FormatError(FormatErrorCode::bad_magic, path + " is not an IDX3 ubyte file");
  const std::size_t count = be32(), rows = be32(), cols = be32();
  if (rows != cols || rows == 0) throw FormatError(FormatErrorCode::shape_mismatch, "IDX images must be square");
  if (side_out) *side_out = rows;
  const std::size_t n = std::min(count, max_images);
  const auto cut = static_cast<unsigned>(std::lround(threshold * 255.0));
  std::vector<std::vector<std::uint8_t>> out;
  std::vector<unsigned char> buf(rows * cols);
  for (std::size_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw FormatError(FormatErrorCode::truncated, "IDX image " + std::to_string(i) + " in " + path);
    std::vector<std::uint8_t> m(buf.size());
    for (std::size_t j = 0; j < buf.size(); ++j) m[j] = buf[j] > cut ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

FliDataset generate_dataset(const SimulationConfig& cfg, std::uint64_t seed, unsigned threads) {
  cfg.validate();
  FliDataset ds = empty_dataset(cfg, seed);
  const std::size_t side = cfg.image_side, per_image = side * side;

  std::vector<std::vector<std::uint8_t>> masks;
  if (!cfg.mask_idx_path.empty()) {
    std::size_t idx_side = 0;
    masks = read_idx_masks(cfg.mask_idx_path, cfg.samples, cfg.mask_threshold, &idx_side);
    if (idx_side != side)
      throw ConfigError("simulate.mask_idx_path", "IDX image side " + std::to_string(idx_side) +
                                                      " differs from image_side " + std::to_string(side));
    if (masks.size() < cfg.samples)
      throw ConfigError("simulate.mask_idx_path", "IDX file holds fewer images than samples");
  } else {
    for (std::size_t s = 0; s < cfg.samples; ++s) {
      CounterRng rng(seed, kSceneStream + s, 1);
      masks.push_back(stroke_mask(side, rng));
    }
  }

  auto draw_params = [&](CounterRng& rng) {
    LifetimeParams p;
    p.tau1_ns = rng.uniform(cfg.tau1_ns.lo, cfg.tau1_ns.hi);
    p.tau2_ns = rng.uniform(cfg.tau2_ns.lo, cfg.tau2_ns.hi);
    p.a_r = rng.uniform(cfg.a_r.lo, cfg.a_r.hi);
    return p;
  };
  std::vector<LifetimeParams> shape_params(cfg.samples);
  for (std::size_t s = 0; s < cfg.samples; ++s) {
    CounterRng rng(seed, kSceneStream + s, 2);
    shape_params[s] = draw_params(rng);
  }

  parallel_for(ds.pixels(), threads, [&](std::size_t pixel) {
    const std::size_t s = pixel / per_image;
    CounterRng rng(seed, pixel);
    PixelSpec spec;
    spec.foreground = masks[s][pixel % per_image] != 0;
    spec.params = cfg.params == ParamMode::per_pixel ? draw_params(rng) : shape_params[s];
    spec.delay_ps = rng.uniform(cfg.delay_ps.lo, cfg.delay_ps.hi);
    spec.peak = rng.uniform(cfg.peak_counts.lo, cfg.peak_counts.hi);
    if (!spec.foreground) spec.delay_ps = 0;
    render_pixel(ds, pixel, spec, rng);
    ds.mask[pixel] = spec.foreground ? 1.0f : 0.0f;
  });
  return ds;
}

FliDataset make_phantom(const SimulationConfig& cfg_in, std::uint64_t seed, unsigned threads) {
  SimulationConfig cfg = cfg_in;
  cfg.scene = SceneKind::phantom;
  cfg.validate();
  FliDataset ds = empty_dataset(cfg, seed);
  const std::size_t side = cfg.image_side, per_image = side * side;
  const auto rects = cfg.phantom.layout(side);
  const auto delays = cfg.phantom.delays_ps();
  std::vector<int> region_of(per_image, -1);
  for (std::size_t i = 0; i < rects.size(); ++i)
    for (std::size_t r = rects[i].row; r < rects[i].row + rects[i].rows; ++r)
      for (std::size_t c = rects[i].col; c < rects[i].col + rects[i].cols; ++c)
        region_of[r * side + c] = static_cast<int>(i);

  parallel_for(ds.pixels(), threads, [&](std::size_t pixel) {
    CounterRng rng(seed, pixel);
    const int region = region_of[pixel % per_image];
    PixelSpec spec;
    spec.foreground = region >= 0;
    spec.params = cfg.phantom.embedding;
    spec.delay_ps = spec.foreground ? delays[static_cast<std::size_t>(region)] : 0.0;
    spec.peak = rng.uniform(cfg.phantom.peak_counts.lo, cfg.phantom.peak_counts.hi);
    render_pixel(ds, pixel, spec, rng);
    ds.mask[pixel] = static_cast<float>(region + 1);
  });
  return ds;
}

FliDataset simulate(const SimulationConfig& cfg, std::uint64_t seed, unsigned threads) {
  return cfg.scene == SceneKind::phantom ? make_phantom(cfg, seed, threads) : generate_dataset(cfg, seed, threads);
}

FliDataset with_reference_irf(const FliDataset& ds) {
  if (!ds.has_config) throw StateError("dataset carries no generation config; reference IRF unknown");
  FliDataset out = ds;
  const auto ref = make_irf(ds.config.reference_irf(), ds.axis);
  const std::size_t g = ds.gates();
  for (std::size_t p = 0; p < ds.pixels(); ++p) store(out.irf, p * g, ref.counts);
  return out;
}

}  // namespace flilab
