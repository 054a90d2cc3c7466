#include <benchmark/benchmark.h>

#include <numeric>

#include "flilab/attention.hpp"
#include "flilab/fit.hpp"
#include "flilab/model.hpp"
#include "flilab/simulate.hpp"

using namespace flilab;

namespace {

FliDataset desk_data() {
  SimulationConfig c;
  c.samples = 1;
  c.image_side = 28;
  c.axis = TimeAxis{64, 80, -640};
  c.params = ParamMode::per_pixel;
  return generate_dataset(c, 1);
}

ModelConfig desk_model() {
  ModelConfig m;
  m.d_model = 32;
  m.heads = 4;
  m.gates = 64;
  m.seed = 1;
  return m;
}

void BM_Inference(benchmark::State& state) {
  const FliDataset ds = desk_data();
  const auto w = MFliNetWeights::init(desk_model());
  std::vector<std::size_t> idx(static_cast<std::size_t>(state.range(0)));
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor tpsf = normalized_batch(ds.tpsf, 64, idx), irf = normalized_batch(ds.irf, 64, idx);
  for (auto _ : state) benchmark::DoNotOptimize(forward_pixels(tpsf, irf, w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Inference)->Arg(1)->Arg(8)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const FliDataset ds = desk_data();
  auto w = MFliNetWeights::init(desk_model());
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor tpsf = normalized_batch(ds.tpsf, 64, idx), irf = normalized_batch(ds.irf, 64, idx);
  const auto params = w.parameters();
  for (auto _ : state) {
    for (auto p : params) p.zero_grad();
    Tape tape;
    const auto out = forward_pixels(tpsf, irf, w);
    tape.backward(add(add(sum(out.tau1), sum(out.tau2)), sum(out.a_r)));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_DiffAttention(benchmark::State& state) {
  CounterRng rng(4);
  const auto w = AttentionWeights::init(32, 4, true, rng);
  std::vector<double> v(64 * 65 * 32);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  const Tensor x({64, 65, 32}, std::move(v));
  for (auto _ : state) benchmark::DoNotOptimize(diff_attention(x, w));
}
BENCHMARK(BM_DiffAttention)->Unit(benchmark::kMillisecond);

void BM_LmFit(benchmark::State& state) {
  const TimeAxis axis{static_cast<std::size_t>(state.range(0)), 40, -640};
  const TimeHistogram irf = make_irf(IrfModel{}, axis);
  FitParams p;
  p.amplitude = 1000;
  p.tau1_ns = 0.4;
  p.tau2_ns = 1.2;
  p.a_r = 0.5;
  p.t0_ps = 60;
  const TimeHistogram tpsf = forward_fit_model(p, irf);
  for (auto _ : state) benchmark::DoNotOptimize(lm_fit(tpsf, irf, FitModelSpec{}));
}
BENCHMARK(BM_LmFit)->Arg(64)->Arg(176)->Unit(benchmark::kMicrosecond);

void BM_Convolve(benchmark::State& state) {
  const TimeAxis axis{176, 40, -640};
  const TimeHistogram irf = make_irf(IrfModel{}, axis), decay = biexp_decay({0.4, 1.2, 0.5}, axis);
  for (auto _ : state) benchmark::DoNotOptimize(convolve(irf, decay));
}
BENCHMARK(BM_Convolve)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
