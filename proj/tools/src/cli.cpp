#include "flilab/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "flilab/dataset_io.hpp"
#include "flilab/error.hpp"
#include "flilab/gradcheck.hpp"
#include "flilab/parallel.hpp"
#include "flilab/report.hpp"

namespace flilab::cli {
namespace {

using Clock = std::chrono::steady_clock;

const char* irf_name(IrfSource s) { return s == IrfSource::pixel ? "pixel" : "reference"; }

IrfSource parse_irf(const std::string& s, const std::string& field) {
  if (s == "pixel") return IrfSource::pixel;
  if (s == "reference") return IrfSource::reference;
  throw ConfigError(field, "expected pixel or reference, got \"" + s + "\"");
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  return os;
}

void write_file(const std::string& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  os.close();
  if (!os) throw IoError("failed writing " + path);
}

void write_json(const std::string& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

unsigned env_threads() {
  const char* s = std::getenv("FLILAB_THREADS");
  if (!s || !*s) return 0;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (*end != '\0' || v < 0 || v > 4096) throw ConfigError("FLILAB_THREADS", "expected a non-negative integer");
  return static_cast<unsigned>(v);
}

struct Context {
  RunConfig cfg;
  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  unsigned threads = 0;
  std::ostream* out = nullptr;

  std::uint64_t seed() const { return seed_flag.value_or(cfg.seed.value_or(0)); }

  Json provenance(const std::string& command) const {
    Json j;
    j["command"] = command;
    j["seed"] = seed();
    j["config_path"] = config_path;
    j["config"] = to_json(cfg);
    return j;
  }
};

// ---------------------------------------------------------------------------

std::pair<double, double> delay_range(const SimulationConfig& c) {
  if (c.scene == SceneKind::phantom) {
    const auto d = c.phantom.delays_ps();
    return {*std::min_element(d.begin(), d.end()), *std::max_element(d.begin(), d.end())};
  }
  return {c.delay_ps.lo, c.delay_ps.hi};
}

int cmd_simulate(Context& ctx, const std::string& out_path) {
  SimulationConfig sc = ctx.cfg.simulate;
  sc.validate();
  const FliDataset ds = simulate(sc, ctx.seed(), ctx.threads);
  save_dataset(ds, out_path);
  std::size_t fg = 0;
  for (std::size_t p = 0; p < ds.pixels(); ++p) fg += ds.foreground(p) ? 1 : 0;
  const auto [dlo, dhi] = delay_range(sc);
  *ctx.out << "wrote " << out_path << ": N=" << ds.samples << " images of " << ds.height << "x" << ds.width
           << ", G=" << ds.gates() << " gates, " << ds.pixels() << " pixels (" << fg << " foreground), delays "
           << num(dlo) << ".." << num(dhi) << " ps, seed " << ctx.seed() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, model_out, log, checkpoint, resume;
  std::string attention, irf = "pixel";
};

int cmd_train(Context& ctx, const TrainArgs& a) {
  FliDataset ds = load_dataset(a.data);
  const IrfSource irf = parse_irf(a.irf, "--irf");
  if (irf == IrfSource::reference) ds = with_reference_irf(ds);
  ModelConfig mc = ctx.cfg.model;
  TrainConfig tc = ctx.cfg.train;
  if (!a.attention.empty()) {
    if (a.attention == "diff")
      mc.attention = AttentionKind::differential;
    else if (a.attention == "standard")
      mc.attention = AttentionKind::standard;
    else
      throw ConfigError("--attention", "expected diff or standard");
  }
  if (ctx.seed_flag || ctx.cfg.seed) mc.seed = tc.seed = ctx.seed();
  mc.gates = ds.gates();
  if (!a.checkpoint.empty()) tc.checkpoint_path = a.checkpoint;
  if (tc.checkpoint_every > 0 && tc.checkpoint_path.empty()) tc.checkpoint_path = a.model_out + ".ckpt";

  const auto t0 = Clock::now();
  TrainResult r = train(ds, mc, tc, a.resume.empty() ? std::nullopt : std::optional<std::string>(a.resume));
  const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  save_weights(r.best, a.model_out);
  Json side = ctx.provenance("train");
  side["format"] = "FLW1";
  side["irf"] = irf_name(irf);
  side["model"] = flilab::to_json(mc);
  side["train"] = flilab::to_json(tc);
  side["data"] = a.data;
  write_json(a.model_out + ".json", side);

  const std::string log_path = a.log.empty() ? a.model_out + ".log.csv" : a.log;
  std::ostringstream log;
  r.log.write_csv(log, true);
  write_file(log_path, log.str());

  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : r.log.rows) best = std::min(best, row.val_loss);
  *ctx.out << "trained " << (mc.attention == AttentionKind::differential ? "differential" : "standard")
           << " model (" << r.best.parameter_count() << " parameters, irf " << irf_name(irf) << ") for "
           << (r.log.rows.empty() ? 0 : r.log.rows.back().epoch) << " epochs in " << num(seconds)
           << " s; best validation loss " << num(best) << "; wrote " << a.model_out << " and " << log_path << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

// Model config from the weights sidecar when present, else from --config.
ModelConfig model_for_weights(const Context& ctx, const std::string& weights, std::string* irf_out) {
  const std::string side = weights + ".json";
  if (!std::filesystem::exists(side)) return ctx.cfg.model;
  const Json j = read_json_file(side);
  if (!j.is_object() || !j.contains("model")) throw ConfigError(side, "missing \"model\" section");
  if (irf_out && j.contains("irf") && j["irf"].is_string()) *irf_out = j["irf"].get<std::string>();
  return model_from_json(j["model"], side + ":model");
}

void write_prediction_csv(std::ostream& os, const FliDataset& ds, const Prediction& p) {
  os << kFitCsvHeader << '\n';
  for (std::size_t i = 0; i < ds.pixels(); ++i) {
    if (!ds.foreground(i)) continue;
    const double t1 = p.tau1[i], t2 = p.tau2[i], ar = p.a_r[i];
    os << i % ds.width << ',' << i / ds.width << ',' << ds.region(i) << ',' << num(t1) << ',' << num(t2) << ','
       << num(ar) << ",," << num(ar * t1 + (1.0 - ar) * t2) << ",,1\n";
  }
}

struct PredictArgs {
  std::string data, weights, out, irf;
};

int cmd_predict(Context& ctx, const PredictArgs& a) {
  std::string irf_text = "pixel";
  const ModelConfig mc = model_for_weights(ctx, a.weights, &irf_text);
  if (!a.irf.empty()) irf_text = a.irf;
  const IrfSource irf = parse_irf(irf_text, "--irf");
  FliDataset ds = load_dataset(a.data);
  if (irf == IrfSource::reference) ds = with_reference_irf(ds);
  const MFliNetWeights w = load_weights(a.weights, mc);
  const Prediction p = predict(ds, w, ctx.threads);

  std::ostringstream csv;
  write_prediction_csv(csv, ds, p);
  write_file(a.out, csv.str());
  Json side = ctx.provenance("predict");
  side["weights"] = a.weights;
  side["data"] = a.data;
  side["irf"] = irf_name(irf);
  side["pixels"] = p.pixels_evaluated;
  side["seconds"] = p.seconds;
  write_json(a.out + ".json", side);
  const double rate = p.seconds > 0 ? static_cast<double>(p.pixels_evaluated) / p.seconds : 0.0;
  *ctx.out << "predicted " << p.pixels_evaluated << " pixels in " << num(p.seconds) << " s (" << num(std::round(rate))
           << " pixels/s); wrote " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string data, out, mode = "nlsf", offset = "on", irf;
};

int cmd_fit(Context& ctx, const FitArgs& a) {
  FitModelSpec spec = ctx.cfg.fit.model;
  if (a.offset == "on")
    spec.fit_offset = true;
  else if (a.offset == "off")
    spec.fit_offset = false;
  else
    throw ConfigError("--offset-correction", "expected on or off");
  spec.validate();
  FitImageOptions opts;
  if (a.mode == "nlsf")
    opts.method = FitMethod::nlsf;
  else if (a.mode == "cmm")
    opts.method = FitMethod::cmm;
  else
    throw ConfigError("--mode", "expected nlsf or cmm");
  opts.irf_source = a.irf.empty() ? ctx.cfg.fit.irf : parse_irf(a.irf, "--irf");
  opts.threads = ctx.threads;
  const FliDataset ds = load_dataset(a.data);

  const auto t0 = Clock::now();
  const FitImageResult r = fit_image(ds, spec, opts);
  const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  std::ostringstream csv;
  write_fit_csv(csv, r);
  write_file(a.out, csv.str());
  Json side = ctx.provenance("fit");
  side["data"] = a.data;
  side["mode"] = a.mode;
  side["offset_correction"] = spec.fit_offset;
  side["irf"] = irf_name(opts.irf_source);
  side["pixels"] = r.pixels.size();
  side["seconds"] = seconds;
  Json regions = Json::array();
  for (const auto& s : r.regions)
    regions.push_back({{"region", s.region}, {"pixels", s.pixels}, {"mean_tau_m", s.mean_tau_m},
                       {"std_tau_m", s.std_tau_m}});
  side["regions"] = regions;
  write_json(a.out + ".json", side);

  std::size_t failed = 0;
  for (const auto& p : r.pixels) failed += p.ok ? 0 : 1;
  *ctx.out << "fitted " << r.pixels.size() << " pixels (" << a.mode << ", offset " << a.offset << ", "
           << irf_name(opts.irf_source) << " IRF) in " << num(seconds) << " s";
  if (failed) *ctx.out << ", " << failed << " failed";
  *ctx.out << "; wrote " << a.out << '\n';
  *ctx.out << "region,pixels,mean_tau_m,std_tau_m\n";
  for (const auto& s : r.regions)
    *ctx.out << s.region << ',' << s.pixels << ',' << num(s.mean_tau_m) << ',' << num(s.std_tau_m) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string truth, report, plots;
  std::vector<std::string> preds, fits;
};

MethodResult load_method(const std::string& spec, const std::string& flag) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw ConfigError(flag, "expected METHOD=PATH, got \"" + spec + "\"");
  MethodResult m;
  m.method = spec.substr(0, eq);
  const std::string path = spec.substr(eq + 1);
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  m.rows = read_fit_csv(is);
  const std::string side = path + ".json";
  if (std::filesystem::exists(side)) {
    const Json j = read_json_file(side);
    if (j.contains("seconds") && j.contains("pixels") && j["pixels"].get<double>() > 0)
      m.seconds_per_pixel = j["seconds"].get<double>() / j["pixels"].get<double>();
  }
  return m;
}

int cmd_eval(Context& ctx, const EvalArgs& a) {
  std::vector<MethodResult> methods;
  for (const auto& s : a.preds) methods.push_back(load_method(s, "--pred"));
  for (const auto& s : a.fits) methods.push_back(load_method(s, "--fits"));
  if (methods.empty()) throw ConfigError("eval", "no --pred or --fits inputs given");
  std::map<std::string, int> count;
  for (const auto& m : methods)
    if (++count[m.method] > 1) throw ConfigError("eval", "method \"" + m.method + "\" given twice");
  const auto& wanted = ctx.cfg.eval.methods;
  if (!wanted.empty()) {
    for (const auto& w : wanted)
      if (!count.count(w)) throw ConfigError("eval.methods", "configured method \"" + w + "\" has no input");
    for (const auto& m : methods)
      if (std::find(wanted.begin(), wanted.end(), m.method) == wanted.end())
        throw ConfigError("eval.methods", "method \"" + m.method + "\" is not configured");
    std::vector<MethodResult> ordered;
    for (const auto& w : wanted)
      for (auto& m : methods)
        if (m.method == w) ordered.push_back(std::move(m));
    methods = std::move(ordered);
  }

  const FliDataset truth = load_dataset(a.truth);
  const auto rows = build_report(truth, methods);
  std::ostringstream csv;
  write_report_csv(csv, rows);
  write_file(a.report, csv.str());
  Json side = ctx.provenance("eval");
  side["truth"] = a.truth;
  Json inputs = Json::array();
  for (const auto& s : a.preds) inputs.push_back(s);
  for (const auto& s : a.fits) inputs.push_back(s);
  side["inputs"] = inputs;
  write_json(a.report + ".json", side);

  std::vector<std::string> svgs;
  if (ctx.cfg.eval.plots) {
    std::filesystem::path dir = a.plots.empty() ? std::filesystem::path(a.report).parent_path() : std::filesystem::path(a.plots);
    const std::string stem = std::filesystem::path(a.report).stem().string();
    std::vector<int> regions;
    for (const auto& r : rows)
      if (std::find(regions.begin(), regions.end(), r.region) == regions.end()) regions.push_back(r.region);
    for (int reg : regions) {
      const std::string path = (dir / (stem + "_region" + std::to_string(reg) + ".svg")).string();
      std::ostringstream svg;
      write_region_svg(svg, reg, rows);
      write_file(path, svg.str());
      svgs.push_back(path);
    }
  }
  *ctx.out << csv.str();
  *ctx.out << "wrote " << a.report;
  if (!svgs.empty()) *ctx.out << " and " << svgs.size() << " SVG plots";
  *ctx.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(Context& ctx, std::size_t seeds, const std::string& filter) {
  GradCheckOptions opts;
  opts.seeds = seeds;
  opts.base_seed = ctx.seed();
  bool all = true;
  std::size_t ran = 0;
  double total = 0;
  *ctx.out << "name,seeds,coordinates,max_rel_error,tolerance,seconds,result\n";
  for (const auto& spec : default_gradcheck_suite()) {
    if (!filter.empty() && spec.name.find(filter) == std::string::npos) continue;
    const auto r = run_gradcheck(spec, opts);
    ++ran;
    total += r.seconds;
    all = all && r.passed;
    *ctx.out << r.name << ',' << r.seeds << ',' << r.coordinates << ',' << num(r.max_rel_error) << ','
             << num(r.tolerance) << ',' << num(r.seconds) << ',' << (r.passed ? "PASS" : "FAIL") << '\n';
  }
  if (ran == 0) throw ConfigError("--filter", "no gradient check matches \"" + filter + "\"");
  *ctx.out << (all ? "all " : "FAILED: not all ") << ran << " checks passed, " << num(total) << " s\n";
  return all ? kOk : kNumerical;
}

std::vector<std::string> split_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError(path, "expected an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  StrictObject o(j, "");
  if (o.has("seed") && !o.raw("seed").is_null()) {
    std::size_t s = 0;
    o.get("seed", s);
    c.seed = s;
  }
  if (o.has("simulate")) c.simulate = simulation_from_json(o.raw("simulate"), "simulate");
  if (o.has("model")) c.model = model_from_json(o.raw("model"), "model");
  if (o.has("train")) c.train = train_from_json(o.raw("train"), "train");
  if (o.has("fit")) {
    StrictObject f(o.raw("fit"), "fit");
    if (f.has("model")) c.fit.model = fit_spec_from_json(f.raw("model"), "fit.model");
    if (f.has("irf")) {
      std::string s;
      f.get("irf", s);
      c.fit.irf = parse_irf(s, "fit.irf");
    }
    f.finish();
  }
  if (o.has("eval")) {
    StrictObject e(o.raw("eval"), "eval");
    if (e.has("methods")) c.eval.methods = split_list(e.raw("methods"), "eval.methods");
    e.get("plots", c.eval.plots);
    e.finish();
  }
  o.finish();
  c.simulate.validate();
  c.model.validate();
  c.train.validate();
  c.fit.model.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

Json to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed ? Json(*c.seed) : Json(nullptr);
  j["simulate"] = flilab::to_json(c.simulate);
  j["model"] = flilab::to_json(c.model);
  j["train"] = flilab::to_json(c.train);
  j["fit"] = {{"model", flilab::to_json(c.fit.model)}, {"irf", irf_name(c.fit.irf)}};
  j["eval"] = {{"methods", c.eval.methods}, {"plots", c.eval.plots}};
  return j;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fluorescence lifetime simulation, fitting and MFliNet training", "flilab"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string config;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config's seed)");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads, 0 = all cores (env FLILAB_THREADS)");
  app.add_option("--config", config, "RunConfig JSON file");

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset (FLD1 plus JSON sidecar)");
  std::string sim_out;
  std::string scene;
  sim->add_option("--out", sim_out, "Output dataset path")->required();
  sim->add_option("--scene", scene, "Override simulate.scene")->check(CLI::IsMember({"strokes", "phantom"}));

  auto* tr = app.add_subcommand("train", "Train MFliNet or the standard-attention baseline");
  TrainArgs ta;
  tr->add_option("--data", ta.data, "Training dataset")->required();
  tr->add_option("--model-out", ta.model_out, "Best-validation weights (FLW1)")->required();
  tr->add_option("--attention", ta.attention, "diff or standard (default: model.attention)")
      ->check(CLI::IsMember({"diff", "standard"}));
  tr->add_option("--irf", ta.irf, "Model IRF input: pixel, or reference for the no-IRF ablation")
      ->check(CLI::IsMember({"pixel", "reference"}));
  tr->add_option("--log", ta.log, "Training log CSV (default MODEL_OUT.log.csv)");
  tr->add_option("--checkpoint", ta.checkpoint, "Checkpoint path (overrides train.checkpoint_path)");
  tr->add_option("--resume", ta.resume, "Resume from a checkpoint");

  auto* pr = app.add_subcommand("predict", "Run a trained model over a dataset");
  PredictArgs pa;
  pr->add_option("--data", pa.data, "Dataset")->required();
  pr->add_option("--weights", pa.weights, "FLW1 weights")->required();
  pr->add_option("--out", pa.out, "Per-pixel CSV")->required();
  pr->add_option("--irf", pa.irf, "Override the IRF input recorded with the weights")
      ->check(CLI::IsMember({"pixel", "reference"}));

  auto* fi = app.add_subcommand("fit", "Per-pixel NLSF or CMM lifetime estimation");
  FitArgs fa;
  fi->add_option("--data", fa.data, "Dataset")->required();
  fi->add_option("--out", fa.out, "Per-pixel CSV")->required();
  fi->add_option("--mode", fa.mode, "nlsf or cmm")->check(CLI::IsMember({"nlsf", "cmm"}));
  fi->add_option("--offset-correction", fa.offset, "on or off")->check(CLI::IsMember({"on", "off"}));
  fi->add_option("--irf", fa.irf, "IRF used by the fit (default fit.irf)")
      ->check(CLI::IsMember({"pixel", "reference"}));

  auto* ev = app.add_subcommand("eval", "Per-region comparison report and box plots");
  EvalArgs ea;
  ev->add_option("--truth", ea.truth, "Dataset with ground truth")->required();
  ev->add_option("--pred", ea.preds, "METHOD=CSV from predict (repeatable)");
  ev->add_option("--fits", ea.fits, "METHOD=CSV from fit (repeatable)");
  ev->add_option("--report", ea.report, "Report CSV")->required();
  ev->add_option("--plots", ea.plots, "Directory for SVG plots (default: next to the report)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::size_t gc_seeds = 100;
  std::string gc_filter;
  gc->add_option("--seeds", gc_seeds, "Seeds per check")->check(CLI::PositiveNumber);
  gc->add_option("--filter", gc_filter, "Only checks whose name contains this text");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    Context ctx;
    ctx.out = &out;
    ctx.config_path = config;
    if (!config.empty()) ctx.cfg = load_run_config(config);
    if (seed_opt->count()) ctx.seed_flag = seed;
    ctx.threads = threads_opt->count() ? threads : env_threads();

    if (sim->parsed()) {
      if (!scene.empty()) ctx.cfg.simulate.scene = scene == "phantom" ? SceneKind::phantom : SceneKind::strokes;
      return cmd_simulate(ctx, sim_out);
    }
    if (tr->parsed()) return cmd_train(ctx, ta);
    if (pr->parsed()) return cmd_predict(ctx, pa);
    if (fi->parsed()) return cmd_fit(ctx, fa);
    if (ev->parsed()) return cmd_eval(ctx, ea);
    if (gc->parsed()) return cmd_gradcheck(ctx, gc_seeds, gc_filter);
    err << "no subcommand\n";
    return kConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const UndefinedInputError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace flilab::cli
