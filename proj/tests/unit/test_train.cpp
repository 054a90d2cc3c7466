#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "flilab/error.hpp"
#include "flilab/train.hpp"
#include "test_util.hpp"

using namespace flilab;
using namespace flilab::testing;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("flilab_train_" + name)).string();
}

ModelConfig toy_model(std::size_t gates) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.gates = gates;
  c.ffn_hidden = 16;
  c.seed = 1;
  return c;
}

SimulationConfig toy_data(std::size_t samples) {
  SimulationConfig c;
  c.samples = samples;
  c.image_side = 28;
  c.axis = TimeAxis{16, 160, -960};
  c.params = ParamMode::per_pixel;
  c.peak_counts = {500, 2000};
  return c;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.seed = 9;
  return t;
}

HeadOutputs heads_of(std::vector<double> a, std::vector<double> b, std::vector<double> c) {
  const Shape s{a.size()};
  return {Tensor(s, std::move(a)), Tensor(s, std::move(b)), Tensor(s, std::move(c))};
}

std::string log_without_time(const TrainLog& log) {
  std::ostringstream os;
  TrainLog copy = log;
  for (auto& r : copy.rows) r.checkpoint.clear();
  copy.write_csv(os, false);
  return os.str();
}

}  // namespace

TEST(Mse, ZeroOffsetAndMask) {
  const std::array<Tensor, 3> truth{Tensor({3}, {0.5, 0.6, 0.7}), Tensor({3}, {1.0, 1.1, 1.2}),
                                    Tensor({3}, {0.2, 0.3, 0.4})};
  const Tensor all = Tensor::full({3}, 1.0);
  EXPECT_EQ(mse_multihead(heads_of({0.5, 0.6, 0.7}, {1.0, 1.1, 1.2}, {0.2, 0.3, 0.4}), truth, all).total.item(), 0.0);

  const auto off = mse_multihead(heads_of({0.5, 0.6, 0.7}, {1.25, 1.35, 1.45}, {0.2, 0.3, 0.4}), truth, all);
  EXPECT_NEAR(off.total.item(), 0.0625, 1e-15);
  EXPECT_NEAR(off.heads[1], 0.0625, 1e-15);
  EXPECT_EQ(off.heads[0], 0.0);

  const Tensor mask({3}, {1, 0, 1});
  const double base = mse_multihead(heads_of({0.4, 0.6, 0.7}, {1, 1.1, 1.2}, {0.2, 0.3, 0.4}), truth, mask).total.item();
  const double moved = mse_multihead(heads_of({0.4, 9.0, 0.7}, {1, -4, 1.2}, {0.2, 7, 0.4}), truth, mask).total.item();
  EXPECT_EQ(base, moved);
  EXPECT_NEAR(base, 0.01 / 2, 1e-15);

  EXPECT_THROW(mse_multihead(heads_of({0.5, 0.6, 0.7}, {1, 1, 1}, {0, 0, 0}), truth, Tensor::zeros({3})),
               UndefinedInputError);
}

TEST(Mse, WeightsScaleHeads) {
  const std::array<Tensor, 3> truth{Tensor::zeros({2}), Tensor::zeros({2}), Tensor::zeros({2})};
  const auto l = mse_multihead(heads_of({1, 1}, {2, 2}, {3, 3}), truth, Tensor::full({2}, 1.0), {1.0, 0.5, 0.0});
  EXPECT_NEAR(l.total.item(), 1.0 + 0.5 * 4.0, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p({3}, {0.25, -0.5, 1.0}, true);
  Adam opt({p});
  p.zero_grad();
  {
    Tape tape;
    tape.backward(sum(mul(p, Tensor::zeros({3}))));
  }
  EXPECT_TRUE(opt.step(1e-3));
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{0.25, -0.5, 1.0}));
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  Tensor p({3}, {0.25, -0.5, 1.0}, true);
  Adam opt({p});
  {
    Tape tape;
    tape.backward(sum(mul(p, Tensor({3}, {3.0, -0.02, 100.0}))));
  }
  ASSERT_TRUE(opt.step(1e-3));
  EXPECT_NEAR(p.data()[0], 0.25 - 1e-3, 1e-7);
  EXPECT_NEAR(p.data()[1], -0.5 + 1e-3, 1e-7);
  EXPECT_NEAR(p.data()[2], 1.0 - 1e-3, 1e-7);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, NonFiniteGradientSkipsTheStep) {
  Tensor p({2}, {0.25, -0.5}, true);
  Adam opt({p});
  {
    Tape tape;
    tape.backward(sum(mul(p, Tensor({2}, {1.0, std::numeric_limits<double>::quiet_NaN()}))));
  }
  EXPECT_FALSE(opt.step(1e-3));
  EXPECT_EQ(opt.skipped(), 1u);
  EXPECT_EQ(opt.steps(), 0u);
  EXPECT_EQ(p.data()[0], 0.25);
}

TEST(Adam, IdenticalRunsIdenticalTrajectories) {
  auto run = [] {
    Tensor p({2}, {0.3, -0.7}, true);
    Adam opt({p});
    std::vector<double> traj;
    for (int i = 0; i < 20; ++i) {
      p.zero_grad();
      Tape tape;
      tape.backward(sum(mul(p, p)));
      opt.step(1e-2);
      traj.insert(traj.end(), p.data().begin(), p.data().end());
    }
    return traj;
  };
  EXPECT_EQ(run(), run());
}

TEST(Plateau, ThreeReductions) {
  PlateauScheduler s(1e-3, 0.5, 5, 1e-5);
  EXPECT_TRUE(s.observe(1.0));
  for (int i = 0; i < 15; ++i) EXPECT_FALSE(s.observe(1.0));
  EXPECT_EQ(s.reductions, 3u);
  EXPECT_NEAR(s.lr(), 1.25e-4, 1e-11);
  EXPECT_TRUE(s.observe(0.5));
  EXPECT_NEAR(s.lr(), 1.25e-4, 1e-11);
  for (int i = 0; i < 100; ++i) s.observe(1.0);
  EXPECT_NEAR(s.lr(), 1e-5, 1e-12);
}

TEST(Split, DisjointCoveringAndSeedStable) {
  const FliDataset ds = generate_dataset(toy_data(2), 3);
  const DataSplit a = split_pixels(ds, 0.1, 5), b = split_pixels(ds, 0.1, 5), c = split_pixels(ds, 0.1, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_NE(a.validation, c.validation);
  std::set<std::size_t> tr(a.train.begin(), a.train.end()), all = tr;
  for (auto v : a.validation) {
    EXPECT_FALSE(tr.count(v));
    all.insert(v);
  }
  std::size_t fg = 0;
  for (std::size_t p = 0; p < ds.pixels(); ++p) {
    if (ds.foreground(p)) {
      ++fg;
      EXPECT_TRUE(all.count(p));
    }
  }
  EXPECT_EQ(all.size(), fg);
  EXPECT_NEAR(static_cast<double>(a.validation.size()), 0.1 * fg, 1.0);
  EXPECT_THROW(split_pixels(ds, 1.0, 5), ConfigError);
}

TEST(Train, RejectsDatasetWithoutTruthOrWrongGates) {
  FliDataset ds = generate_dataset(toy_data(1), 4);
  EXPECT_THROW(train(ds, toy_model(32), quick(1)), ConfigError);
  ds.tau1.clear();
  ds.tau2.clear();
  ds.a_r.clear();
  EXPECT_THROW(train(ds, toy_model(16), quick(1)), ConfigError);
}

TEST(Train, OneSmallStepLowersTheBatchLoss) {
  const FliDataset ds = generate_dataset(toy_data(1), 5);
  auto w = MFliNetWeights::init(toy_model(16));
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < ds.pixels() && idx.size() < 32; ++p)
    if (ds.foreground(p)) idx.push_back(p);
  const LossTerms before = evaluate_loss(ds, w, idx, {1, 1, 1}, 64);
  Adam opt(w.parameters());
  {
    Tape tape;
    const auto out = forward_pixels(normalized_batch(ds.tpsf, 16, idx), normalized_batch(ds.irf, 16, idx), w);
    std::array<std::vector<double>, 3> t;
    for (auto p : idx) {
      const auto l = ds.truth_at(p);
      t[0].push_back(l.tau1_ns);
      t[1].push_back(l.tau2_ns);
      t[2].push_back(l.a_r);
    }
    const Shape s{idx.size()};
    const auto loss = mse_multihead(out, {Tensor(s, t[0]), Tensor(s, t[1]), Tensor(s, t[2])}, Tensor::full(s, 1.0));
    EXPECT_NEAR(loss.total.item(), before.total.item(), 1e-12);
    tape.backward(loss.total);
  }
  ASSERT_TRUE(opt.step(1e-5));
  EXPECT_LT(evaluate_loss(ds, w, idx, {1, 1, 1}, 64).total.item(), before.total.item());
}

TEST(Train, SameSeedSameLog) {
  const FliDataset ds = generate_dataset(toy_data(1), 6);
  const auto a = train(ds, toy_model(16), quick(2)), b = train(ds, toy_model(16), quick(2));
  EXPECT_EQ(log_without_time(a.log), log_without_time(b.log));
  ASSERT_EQ(a.log.rows.size(), 3u);
  EXPECT_TRUE(std::isnan(a.log.rows[0].train_loss));
  auto ta = a.best.clone(), tb = b.best.clone();
  auto xa = ta.tensors(), xb = tb.tensors();
  for (std::size_t i = 0; i < xa.size(); ++i) EXPECT_EQ(max_abs_diff(xa[i].tensor->data(), xb[i].tensor->data()), 0.0);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const FliDataset ds = generate_dataset(toy_data(1), 7);
  const ModelConfig mc = toy_model(16);
  const TrainResult full = train(ds, mc, quick(4));

  TrainConfig first = quick(2);
  first.checkpoint_every = 2;
  first.checkpoint_path = temp_path("ckpt.flw");
  train(ds, mc, first);
  const TrainResult resumed = train(ds, mc, quick(4), first.checkpoint_path);

  EXPECT_EQ(log_without_time(resumed.log), log_without_time(full.log));
  auto a = full.last.clone(), b = resumed.last.clone();
  auto xa = a.tensors(), xb = b.tensors();
  for (std::size_t i = 0; i < xa.size(); ++i)
    EXPECT_EQ(max_abs_diff(xa[i].tensor->data(), xb[i].tensor->data()), 0.0) << xa[i].name;
  auto ba = full.best.clone(), bb = resumed.best.clone();
  auto ya = ba.tensors(), yb = bb.tensors();
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(max_abs_diff(ya[i].tensor->data(), yb[i].tensor->data()), 0.0);
}

TEST(Train, ToyRunHalvesValidationLoss) {
  FliDataset ds = generate_dataset(toy_data(5), 8);
  // Keep exactly 500 foreground pixels.
  std::size_t fg = 0;
  for (std::size_t p = 0; p < ds.pixels(); ++p)
    if (ds.foreground(p) && ++fg > 500) ds.mask[p] = 0.0f;
  ASSERT_GE(fg, 500u);
  const TrainResult r = train(ds, toy_model(16), quick(30));
  ASSERT_EQ(r.log.rows.size(), 31u);
  double best = r.log.rows[0].val_loss;
  for (const auto& row : r.log.rows) best = std::min(best, row.val_loss);
  EXPECT_LE(best, 0.5 * r.log.rows[0].val_loss) << "epoch0 " << r.log.rows[0].val_loss << " best " << best;
}
