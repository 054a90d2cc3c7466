#include <gtest/gtest.h>

#include "flilab/cli.hpp"
#include "flilab/config_json.hpp"

using namespace flilab;

namespace {

std::string field_of(const Json& j) {
  try {
    cli::run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST(RunConfigJson, DefaultsRoundTrip) {
  cli::RunConfig c;
  c.seed = 77;
  c.simulate.samples = 5;
  c.simulate.scene = SceneKind::phantom;
  c.model.d_model = 32;
  c.model.attention = AttentionKind::standard;
  c.train.lr0 = 3e-4;
  c.fit.model.fit_offset = false;
  c.fit.irf = IrfSource::pixel;
  c.eval.methods = {"mflinet", "cmm"};
  c.eval.plots = false;
  const Json j = cli::to_json(c);
  const cli::RunConfig back = cli::run_config_from_json(j);
  EXPECT_EQ(cli::to_json(back), j);
  EXPECT_EQ(back.seed, std::optional<std::uint64_t>(77));
  EXPECT_EQ(back.simulate.scene, SceneKind::phantom);
  EXPECT_EQ(back.model.attention, AttentionKind::standard);
  EXPECT_EQ(back.eval.methods, c.eval.methods);
}

TEST(RunConfigJson, EmptyDocumentKeepsDefaults) {
  const cli::RunConfig c = cli::run_config_from_json(Json::object());
  EXPECT_FALSE(c.seed.has_value());
  EXPECT_EQ(c.simulate.samples, SimulationConfig{}.samples);
  EXPECT_EQ(c.model.d_model, ModelConfig{}.d_model);
}

TEST(RunConfigJson, UnknownKeysNameTheirPath) {
  EXPECT_EQ(field_of(Json{{"simulat", Json::object()}}), "simulat");
  EXPECT_EQ(field_of(Json{{"simulate", {{"samples", 2}, {"sampels", 3}}}}), "simulate.sampels");
  EXPECT_EQ(field_of(Json{{"fit", {{"model", {{"tau3_ns", 1}}}}}}), "fit.model.tau3_ns");
  EXPECT_EQ(field_of(Json{{"eval", {{"method", Json::array()}}}}), "eval.method");
}

TEST(RunConfigJson, InvertedRangeNamesTheField) {
  const std::string f = field_of(Json{{"simulate", {{"delay_ps", {{"min", 160}, {"max", 0}}}}}});
  EXPECT_EQ(f, "simulate.delay_ps");
  const std::string g = field_of(Json{{"simulate", {{"tau2_ns", {{"min", 2.0}, {"max", 1.0}}}}}});
  EXPECT_EQ(g, "simulate.tau2_ns");
}

TEST(RunConfigJson, WrongTypesAndValues) {
  EXPECT_EQ(field_of(Json{{"model", {{"d_model", "wide"}}}}), "model.d_model");
  EXPECT_EQ(field_of(Json{{"seed", -1}}), "seed");
  EXPECT_EQ(field_of(Json{{"model", {{"attention", "sparse"}}}}), "model.attention");
  EXPECT_EQ(field_of(Json{{"fit", {{"irf", "both"}}}}), "fit.irf");
  EXPECT_EQ(field_of(Json{{"model", {{"d_model", 30}, {"heads", 4}}}}).rfind("model.", 0), 0u);
  EXPECT_THROW(parse_json_text("{\"seed\": 1,", "inline"), ConfigError);
  EXPECT_THROW(cli::run_config_from_json(Json::array()), ConfigError);
}

TEST(RunConfigJson, SectionParsersRoundTrip) {
  TrainConfig t;
  t.loss_weights = {1.0, 0.5, 2.0};
  t.checkpoint_every = 3;
  t.checkpoint_path = "x.flw";
  EXPECT_EQ(to_json(train_from_json(to_json(t))), to_json(t));
  FitModelSpec f = FitModelSpec::mono(true);
  EXPECT_EQ(to_json(fit_spec_from_json(to_json(f))), to_json(f));
  SimulationConfig s;
  s.phantom.regions = {Rect{1, 2, 3, 4}};
  EXPECT_EQ(to_json(simulation_from_json(to_json(s))), to_json(s));
}
