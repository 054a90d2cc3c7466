#include "flilab/config_json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace flilab {
namespace {

Json range_json(double lo, double hi) { return Json{{"min", lo}, {"max", hi}}; }

Json nullable(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

template <class E>
E parse_enum(StrictObject& o, const std::string& key, E current, std::initializer_list<std::pair<const char*, E>> options) {
  if (!o.has(key)) return current;
  std::string s;
  o.get(key, s);
  std::string allowed;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    allowed += allowed.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(o.path(key), "expected one of " + allowed + ", got \"" + s + "\"");
}

void get_nullable(StrictObject& o, const std::string& key, double& out) {
  if (!o.has(key)) return;
  if (o.raw(key).is_null()) {
    out = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  o.get(key, out);
}

}  // namespace

StrictObject::StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ConfigError(path_, "expected a JSON object");
}

bool StrictObject::has(const std::string& key) const { return j_.contains(key); }

const Json& StrictObject::raw(const std::string& key) {
  used_.insert(key);
  return j_.at(key);
}

void StrictObject::get(const std::string& key, double& out) {
  if (!has(key)) return;
  const Json& v = raw(key);
  if (!v.is_number()) throw ConfigError(path(key), "expected a number");
  out = v.get<double>();
  if (!std::isfinite(out)) throw ConfigError(path(key), "must be finite");
}

void StrictObject::get(const std::string& key, bool& out) {
  if (!has(key)) return;
  const Json& v = raw(key);
  if (!v.is_boolean()) throw ConfigError(path(key), "expected true or false");
  out = v.get<bool>();
}

void StrictObject::get(const std::string& key, std::string& out) {
  if (!has(key)) return;
  const Json& v = raw(key);
  if (!v.is_string()) throw ConfigError(path(key), "expected a string");
  out = v.get<std::string>();
}

void StrictObject::get(const std::string& key, std::size_t& out) {
  if (!has(key)) return;
  const Json& v = raw(key);
  if (v.is_number_unsigned()) {
    out = v.get<std::size_t>();
  } else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    out = static_cast<std::size_t>(v.get<std::int64_t>());
  } else {
    throw ConfigError(path(key), "expected a non-negative integer");
  }
}

void StrictObject::get(const std::string& key, Range& out) {
  if (!has(key)) return;
  StrictObject o(raw(key), path(key));
  o.get("min", out.lo);
  o.get("max", out.hi);
  o.finish();
  if (out.lo > out.hi) throw ConfigError(path(key), "min > max");
}

void StrictObject::get(const std::string& key, ParamBounds& out) {
  Range r{out.lo, out.hi};
  get(key, r);
  out = {r.lo, r.hi};
}

void StrictObject::finish() const {
  for (const auto& [key, value] : j_.items())
    if (!used_.count(key)) throw ConfigError(path(key), "unknown key");
}

Json to_json(const SimulationConfig& c) {
  Json j;
  j["scene"] = c.scene == SceneKind::phantom ? "phantom" : "strokes";
  j["samples"] = c.samples;
  j["image_side"] = c.image_side;
  j["axis"] = {{"gates", c.axis.gates}, {"dt_ps", c.axis.dt_ps}, {"t0_ps", c.axis.t0_ps}};
  j["tau1_ns"] = range_json(c.tau1_ns.lo, c.tau1_ns.hi);
  j["tau2_ns"] = range_json(c.tau2_ns.lo, c.tau2_ns.hi);
  j["a_r"] = range_json(c.a_r.lo, c.a_r.hi);
  j["peak_counts"] = range_json(c.peak_counts.lo, c.peak_counts.hi);
  j["delay_ps"] = range_json(c.delay_ps.lo, c.delay_ps.hi);
  j["irf"] = {{"fwhm_ps", c.irf.fwhm_ps}, {"gate_width_ps", c.irf.gate_width_ps}};
  j["irf_center_ps"] = c.irf_center_ps;
  j["noise"] = {{"read_sigma", c.noise.read_sigma}, {"dark_offset", c.noise.dark_offset}};
  j["params"] = c.params == ParamMode::per_pixel ? "per_pixel" : "per_shape";
  j["mask_idx_path"] = c.mask_idx_path;
  j["mask_threshold"] = c.mask_threshold;
  Json ph;
  ph["heights_mm"] = c.phantom.heights_mm;
  ph["slope_ps_per_mm"] = c.phantom.slope_ps_per_mm;
  ph["embedding"] = {{"tau1_ns", c.phantom.embedding.tau1_ns},
                     {"tau2_ns", c.phantom.embedding.tau2_ns},
                     {"a_r", c.phantom.embedding.a_r}};
  Json regions = Json::array();
  for (const auto& r : c.phantom.regions)
    regions.push_back({{"row", r.row}, {"col", r.col}, {"rows", r.rows}, {"cols", r.cols}});
  ph["regions"] = regions;
  ph["peak_counts"] = range_json(c.phantom.peak_counts.lo, c.phantom.peak_counts.hi);
  j["phantom"] = ph;
  return j;
}

SimulationConfig simulation_from_json(const Json& j, const std::string& path) {
  SimulationConfig c;
  StrictObject o(j, path);
  c.scene = parse_enum(o, "scene", c.scene, {{"strokes", SceneKind::strokes}, {"phantom", SceneKind::phantom}});
  o.get("samples", c.samples);
  o.get("image_side", c.image_side);
  if (o.has("axis")) {
    StrictObject a(o.raw("axis"), o.path("axis"));
    a.get("gates", c.axis.gates);
    a.get("dt_ps", c.axis.dt_ps);
    a.get("t0_ps", c.axis.t0_ps);
    a.finish();
  }
  o.get("tau1_ns", c.tau1_ns);
  o.get("tau2_ns", c.tau2_ns);
  o.get("a_r", c.a_r);
  o.get("peak_counts", c.peak_counts);
  o.get("delay_ps", c.delay_ps);
  if (o.has("irf")) {
    StrictObject a(o.raw("irf"), o.path("irf"));
    a.get("fwhm_ps", c.irf.fwhm_ps);
    a.get("gate_width_ps", c.irf.gate_width_ps);
    a.finish();
  }
  o.get("irf_center_ps", c.irf_center_ps);
  if (o.has("noise")) {
    StrictObject a(o.raw("noise"), o.path("noise"));
    a.get("read_sigma", c.noise.read_sigma);
    a.get("dark_offset", c.noise.dark_offset);
    a.finish();
  }
  c.params = parse_enum(o, "params", c.params, {{"per_shape", ParamMode::per_shape}, {"per_pixel", ParamMode::per_pixel}});
  o.get("mask_idx_path", c.mask_idx_path);
  o.get("mask_threshold", c.mask_threshold);
  if (o.has("phantom")) {
    StrictObject p(o.raw("phantom"), o.path("phantom"));
    if (p.has("heights_mm")) {
      const Json& h = p.raw("heights_mm");
      if (!h.is_array()) throw ConfigError(p.path("heights_mm"), "expected an array of numbers");
      c.phantom.heights_mm.clear();
      for (const auto& v : h) {
        if (!v.is_number()) throw ConfigError(p.path("heights_mm"), "expected an array of numbers");
        c.phantom.heights_mm.push_back(v.get<double>());
      }
    }
    p.get("slope_ps_per_mm", c.phantom.slope_ps_per_mm);
    if (p.has("embedding")) {
      StrictObject e(p.raw("embedding"), p.path("embedding"));
      e.get("tau1_ns", c.phantom.embedding.tau1_ns);
      e.get("tau2_ns", c.phantom.embedding.tau2_ns);
      e.get("a_r", c.phantom.embedding.a_r);
      e.finish();
    }
    if (p.has("regions")) {
      const Json& rs = p.raw("regions");
      if (!rs.is_array()) throw ConfigError(p.path("regions"), "expected an array of rectangles");
      c.phantom.regions.clear();
      for (std::size_t i = 0; i < rs.size(); ++i) {
        StrictObject r(rs[i], p.path("regions") + "[" + std::to_string(i) + "]");
        Rect rect;
        r.get("row", rect.row);
        r.get("col", rect.col);
        r.get("rows", rect.rows);
        r.get("cols", rect.cols);
        r.finish();
        c.phantom.regions.push_back(rect);
      }
    }
    p.get("peak_counts", c.phantom.peak_counts);
    p.finish();
  }
  o.finish();
  c.validate();
  return c;
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["encoder_blocks"] = c.encoder_blocks;
  j["decoder_blocks"] = c.decoder_blocks;
  j["ffn_hidden"] = c.ffn_hidden;
  j["gates"] = c.gates;
  j["image_side"] = c.image_side;
  j["attention"] = c.attention == AttentionKind::standard ? "standard" : "differential";
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_from_json(const Json& j, const std::string& path) {
  ModelConfig c;
  StrictObject o(j, path);
  o.get("d_model", c.d_model);
  o.get("heads", c.heads);
  o.get("encoder_blocks", c.encoder_blocks);
  o.get("decoder_blocks", c.decoder_blocks);
  o.get("ffn_hidden", c.ffn_hidden);
  o.get("gates", c.gates);
  o.get("image_side", c.image_side);
  c.attention = parse_enum(o, "attention", c.attention,
                           {{"differential", AttentionKind::differential}, {"standard", AttentionKind::standard}});
  o.get("seed", c.seed);
  o.finish();
  c.validate();
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["lr0"] = c.lr0;
  j["plateau_factor"] = c.plateau_factor;
  j["patience"] = c.patience;
  j["min_lr"] = c.min_lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["validation_fraction"] = c.validation_fraction;
  j["loss_weights"] = c.loss_weights;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["checkpoint_path"] = c.checkpoint_path;
  return j;
}

TrainConfig train_from_json(const Json& j, const std::string& path) {
  TrainConfig c;
  StrictObject o(j, path);
  o.get("lr0", c.lr0);
  o.get("plateau_factor", c.plateau_factor);
  o.get("patience", c.patience);
  o.get("min_lr", c.min_lr);
  o.get("batch_size", c.batch_size);
  o.get("epochs", c.epochs);
  o.get("validation_fraction", c.validation_fraction);
  if (o.has("loss_weights")) {
    const Json& w = o.raw("loss_weights");
    if (!w.is_array() || w.size() != 3) throw ConfigError(o.path("loss_weights"), "expected three numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!w[i].is_number()) throw ConfigError(o.path("loss_weights"), "expected three numbers");
      c.loss_weights[i] = w[i].get<double>();
    }
  }
  o.get("seed", c.seed);
  o.get("checkpoint_every", c.checkpoint_every);
  o.get("checkpoint_path", c.checkpoint_path);
  o.finish();
  c.validate();
  return c;
}

Json to_json(const FitModelSpec& c) {
  Json j;
  j["kind"] = c.kind == DecayModel::mono ? "mono" : "bi";
  j["amplitude"] = range_json(c.amplitude.lo, c.amplitude.hi);
  j["tau1_ns"] = range_json(c.tau1_ns.lo, c.tau1_ns.hi);
  j["tau2_ns"] = range_json(c.tau2_ns.lo, c.tau2_ns.hi);
  j["a_r"] = range_json(c.a_r.lo, c.a_r.hi);
  j["t0_ps"] = range_json(c.t0_ps.lo, c.t0_ps.hi);
  j["baseline"] = range_json(c.baseline.lo, c.baseline.hi);
  j["guess_amplitude"] = nullable(c.guess_amplitude);
  j["guess_tau1_ns"] = c.guess_tau1_ns;
  j["guess_tau2_ns"] = c.guess_tau2_ns;
  j["guess_a_r"] = c.guess_a_r;
  j["guess_t0_ps"] = nullable(c.guess_t0_ps);
  j["guess_baseline"] = nullable(c.guess_baseline);
  j["max_iterations"] = c.max_iterations;
  j["multistart"] = c.multistart;
  j["weighted"] = c.weighted;
  j["read_variance"] = c.read_variance;
  return j;
}

FitModelSpec fit_spec_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  FitModelSpec c;
  if (o.has("kind")) {
    const auto kind = parse_enum(o, "kind", DecayModel::bi, {{"bi", DecayModel::bi}, {"mono", DecayModel::mono}});
    if (kind == DecayModel::mono) c = FitModelSpec::mono(true);
  }
  o.get("amplitude", c.amplitude);
  o.get("tau1_ns", c.tau1_ns);
  o.get("tau2_ns", c.tau2_ns);
  o.get("a_r", c.a_r);
  o.get("t0_ps", c.t0_ps);
  o.get("baseline", c.baseline);
  get_nullable(o, "guess_amplitude", c.guess_amplitude);
  o.get("guess_tau1_ns", c.guess_tau1_ns);
  o.get("guess_tau2_ns", c.guess_tau2_ns);
  o.get("guess_a_r", c.guess_a_r);
  get_nullable(o, "guess_t0_ps", c.guess_t0_ps);
  get_nullable(o, "guess_baseline", c.guess_baseline);
  o.get("max_iterations", c.max_iterations);
  o.get("multistart", c.multistart);
  o.get("weighted", c.weighted);
  o.get("read_variance", c.read_variance);
  o.finish();
  c.validate();
  return c;
}

Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", origin + ": " + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_json_text(ss.str(), path);
}

}  // namespace flilab
