#include "flilab/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "flilab/attention.hpp"
#include "flilab/error.hpp"
#include "flilab/model.hpp"
#include "flilab/rng.hpp"

namespace flilab {
namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

double contract(const Tensor& out, const std::vector<double>& r) {
  const auto v = out.data();
  double s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * r[i];
  return s;
}

Tensor rnd(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

ModelConfig toy_config(std::uint64_t seed, AttentionKind kind) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.gates = 8;
  c.image_side = 2;
  c.ffn_hidden = 16;
  c.attention = kind;
  c.seed = seed;
  return c;
}

// Toy weights with lambda and layer-norm parameters moved off their
// initial values so every gradient path is exercised.
MFliNetWeights toy_weights(std::uint64_t seed, AttentionKind kind, CounterRng& rng) {
  MFliNetWeights w = MFliNetWeights::init(toy_config(seed, kind));
  for (auto& t : w.tensors()) {
    if (!t.trainable) continue;
    const bool perturb = t.name.find("norm") != std::string::npos || t.name.find(".b") != std::string::npos ||
                         t.name.find("lambda") != std::string::npos;
    if (perturb)
      for (double& v : t.tensor->mutable_data()) v += rng.uniform(-0.3, 0.3);
  }
  return w;
}

std::vector<Tensor> with_prefix(MFliNetWeights& w, const std::string& prefix) {
  std::vector<Tensor> out;
  for (auto& t : w.tensors())
    if (t.trainable && t.name.rfind(prefix, 0) == 0) out.push_back(*t.tensor);
  return out;
}

Tensor histogram_batch(CounterRng& rng, std::size_t batch, std::size_t gates) {
  Tensor t = rnd(rng, {batch, gates}, 0.0, 1.0);
  t.set_requires_grad(false);
  return t;
}

template <class Build>
GradCheckSpec spec(std::string name, Build build, double tol = 1e-5) {
  return {name, [name, build](std::uint64_t seed) {
            CounterRng rng(seed, name_hash(name));
            return build(rng, seed);
          },
          tol};
}

GradCase unary_case(CounterRng& rng, Shape s, double lo, double hi, Tensor (*op)(const Tensor&)) {
  Tensor x = rnd(rng, std::move(s), lo, hi);
  return {{x}, [x, op]() { return op(x); }};
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckSpec& spec, const GradCheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport rep;
  rep.name = spec.name;
  rep.tolerance = spec.tolerance;
  for (std::size_t k = 0; k < opts.seeds; ++k) {
    const std::uint64_t seed = opts.base_seed + k;
    GradCase c = spec.make(seed);
    CounterRng rng(seed, name_hash(spec.name), 1);

    std::vector<double> r;
    std::vector<std::vector<double>> analytic;
    {
      Tape tape;
      const Tensor out = c.forward();
      r.resize(out.size());
      for (double& v : r) v = rng.uniform(-1.0, 1.0);
      const Tensor loss = sum(mul(out, Tensor(out.shape(), r)));
      tape.backward(loss);
      for (auto& in : c.inputs) {
        if (in.has_grad()) {
          const auto g = in.grad();
          analytic.emplace_back(g.begin(), g.end());
        } else {
          analytic.emplace_back(in.size(), 0.0);
        }
      }
    }

    for (std::size_t t = 0; t < c.inputs.size(); ++t) {
      Tensor& in = c.inputs[t];
      const std::size_t n = in.size();
      std::vector<std::size_t> coords;
      if (k == 0 || n <= opts.full_check_limit) {
        coords.resize(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
      } else {
        for (std::size_t j = 0; j < opts.sampled_coordinates; ++j)
          coords.push_back(static_cast<std::size_t>(rng() % n));
      }
      for (std::size_t i : coords) {
        auto data = in.mutable_data();
        const double x = data[i];
        const double h = 1e-6 * std::max(1.0, std::abs(x));
        data[i] = x + h;
        const double fp = contract(c.forward(), r);
        data[i] = x - h;
        const double fm = contract(c.forward(), r);
        data[i] = x;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[t][i];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.denominator_floor});
        ++rep.coordinates;
        if (std::isnan(err) || err > rep.max_rel_error) {
          rep.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
          rep.worst_seed = seed;
        }
      }
    }
    ++rep.seeds;
  }
  rep.passed = rep.max_rel_error < spec.tolerance;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

std::vector<GradCheckSpec> default_gradcheck_suite() {
  std::vector<GradCheckSpec> s;
  s.push_back(spec("add", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {3, 4}), b = rnd(g, {4});
    return GradCase{{a, b}, [a, b]() { return add(a, b); }};
  }));
  s.push_back(spec("sub", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {2, 3, 4}), b = rnd(g, {3, 4});
    return GradCase{{a, b}, [a, b]() { return sub(a, b); }};
  }));
  s.push_back(spec("mul", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {3, 4}), b = rnd(g, {3, 4});
    return GradCase{{a, b}, [a, b]() { return mul(a, b); }};
  }));
  s.push_back(spec("mul_broadcast", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {2, 1, 3}), b = rnd(g, {4, 1});
    return GradCase{{a, b}, [a, b]() { return mul(a, b); }};
  }));
  s.push_back(spec("scale", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {3, 4});
    return GradCase{{a}, [a]() { return scale(a, 1.7); }};
  }));
  s.push_back(spec("sigmoid", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 5}, -4, 4, [](const Tensor& x) { return sigmoid(x); });
  }));
  s.push_back(spec("swish", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 5}, -4, 4, [](const Tensor& x) { return swish(x); });
  }));
  s.push_back(spec("elu", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 5}, -3, 3, [](const Tensor& x) { return elu(x); });
  }));
  s.push_back(spec("exp", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 5}, -2, 2, [](const Tensor& x) { return exp(x); });
  }));
  s.push_back(spec("matmul", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {5, 4}), b = rnd(g, {4, 3});
    return GradCase{{a, b}, [a, b]() { return matmul(a, b); }};
  }));
  s.push_back(spec("matmul_shared", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {2, 3, 4}), b = rnd(g, {4, 5});
    return GradCase{{a, b}, [a, b]() { return matmul(a, b); }};
  }));
  s.push_back(spec("matmul_batched", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {2, 3, 4}), b = rnd(g, {2, 4, 5});
    return GradCase{{a, b}, [a, b]() { return matmul(a, b); }};
  }));
  s.push_back(spec("matmul_bt", [](CounterRng& g, std::uint64_t) {
    Tensor a = rnd(g, {2, 3, 4}), b = rnd(g, {2, 5, 4});
    return GradCase{{a, b}, [a, b]() { return matmul_bt(a, b); }};
  }));
  s.push_back(spec("softmax", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 5}, -3, 3, [](const Tensor& x) { return softmax(x, -1); });
  }));
  s.push_back(spec("softmax_axis0", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {4, 3}, -3, 3, [](const Tensor& x) { return softmax(x, 0); });
  }));
  s.push_back(spec("layer_norm", [](CounterRng& g, std::uint64_t) {
    Tensor x = rnd(g, {3, 6}, -2, 2), gain = rnd(g, {6}, 0.5, 1.5), bias = rnd(g, {6});
    return GradCase{{x, gain, bias}, [x, gain, bias]() { return layer_norm(x, gain, bias); }};
  }));
  s.push_back(spec("sum", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 4}, -1, 1, [](const Tensor& x) { return sum(x); });
  }));
  s.push_back(spec("mean", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 4}, -1, 1, [](const Tensor& x) { return mean(x); });
  }));
  s.push_back(spec("mean_axis", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {2, 3, 4}, -1, 1, [](const Tensor& x) { return mean_axis(x, 1); });
  }));
  s.push_back(spec("reshape", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {2, 6}, -1, 1, [](const Tensor& x) { return reshape(x, {3, 4}); });
  }));
  s.push_back(spec("permute", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {2, 3, 4}, -1, 1, [](const Tensor& x) { return permute(x, {2, 0, 1}); });
  }));
  s.push_back(spec("slice_last", [](CounterRng& g, std::uint64_t) {
    return unary_case(g, {3, 6}, -1, 1, [](const Tensor& x) { return slice_last(x, 1, 4); });
  }));
  s.push_back(spec("scaled_attention", [](CounterRng& g, std::uint64_t) {
    Tensor q = rnd(g, {2, 3, 4}), k = rnd(g, {2, 5, 4}), v = rnd(g, {2, 5, 3});
    return GradCase{{q, k, v}, [q, k, v]() { return scaled_attention(q, k, v); }};
  }));
  s.push_back(spec("scaled_attention_fused", [](CounterRng& g, std::uint64_t) {
    Tensor q = rnd(g, {2, 3, 4}), k = rnd(g, {2, 5, 4}), v = rnd(g, {2, 5, 4});
    return GradCase{{q, k, v}, [q, k, v]() { return scaled_attention(q, k, v); }};
  }));
  s.push_back(spec("multi_head_attention", [](CounterRng& g, std::uint64_t) {
    Tensor q = rnd(g, {2, 3, 6}, -2, 2), k = rnd(g, {2, 4, 6}, -2, 2), v = rnd(g, {2, 4, 6});
    return GradCase{{q, k, v}, [q, k, v]() { return multi_head_attention(q, k, v, 3); }};
  }));
  s.push_back(spec("diff_attention", [](CounterRng& g, std::uint64_t seed) {
    CounterRng wr(seed, 7);
    AttentionWeights w = AttentionWeights::init(8, 2, true, wr);
    w.lambda.mutable_data()[0] = g.uniform(0.2, 1.2);
    Tensor x = rnd(g, {5, 8});
    return GradCase{{x, w.wq1, w.wk1, w.wv1, w.wq2, w.wk2, w.wv2, w.wo, w.lambda},
                    [x, w]() { return diff_attention(x, w); }};
  }));
  s.push_back(spec("standard_attention", [](CounterRng& g, std::uint64_t seed) {
    CounterRng wr(seed, 7);
    AttentionWeights w = AttentionWeights::init(8, 2, false, wr);
    Tensor x = rnd(g, {5, 8});
    return GradCase{{x, w.wq1, w.wk1, w.wv1, w.wo}, [x, w]() { return standard_attention(x, w); }};
  }));
  s.push_back(spec("cross_attention", [](CounterRng& g, std::uint64_t seed) {
    CounterRng wr(seed, 7);
    AttentionWeights w = AttentionWeights::init(8, 2, false, wr);
    Tensor xq = rnd(g, {4, 8}), e = rnd(g, {6, 8});
    return GradCase{{xq, e, w.wq1, w.wk1, w.wv1, w.wo}, [xq, e, w]() { return cross_attention(xq, e, w); }};
  }));
  s.push_back(spec("swiglu_ffn", [](CounterRng& g, std::uint64_t seed) {
    MFliNetWeights w = toy_weights(seed, AttentionKind::differential, g);
    Tensor x = rnd(g, {5, 8});
    std::vector<Tensor> in{x};
    for (auto& t : with_prefix(w, "encoder0.ffn.")) in.push_back(t);
    const FfnWeights f = w.encoders[0].ffn;
    return GradCase{in, [x, f]() { return swiglu_ffn(x, f); }};
  }));
  s.push_back(spec("encoder_block", [](CounterRng& g, std::uint64_t seed) {
    MFliNetWeights w = toy_weights(seed, AttentionKind::differential, g);
    Tensor x = rnd(g, {6, 8});
    std::vector<Tensor> in{x};
    for (auto& t : with_prefix(w, "encoder0.")) in.push_back(t);
    const EncoderWeights e = w.encoders[0];
    return GradCase{in, [x, e]() { return encoder_block(x, e); }};
  }, 1e-4));
  s.push_back(spec("decoder_block", [](CounterRng& g, std::uint64_t seed) {
    MFliNetWeights w = toy_weights(seed, AttentionKind::differential, g);
    Tensor x = rnd(g, {6, 8}), e = rnd(g, {6, 8});
    std::vector<Tensor> in{x, e};
    for (auto& t : with_prefix(w, "decoder0.")) in.push_back(t);
    const DecoderWeights d = w.decoders[0];
    return GradCase{in, [x, e, d]() { return decoder_block(x, e, d); }};
  }, 1e-4));
  for (auto kind : {AttentionKind::differential, AttentionKind::standard}) {
    const std::string name = kind == AttentionKind::differential ? "mflinet" : "mflinet_standard";
    s.push_back(spec(name, [kind](CounterRng& g, std::uint64_t seed) {
      MFliNetWeights w = toy_weights(seed, kind, g);
      const Tensor tpsf = histogram_batch(g, 4, 8), irf = histogram_batch(g, 4, 8);
      auto forward = [w, tpsf, irf]() {
        const HeadOutputs o = forward_pixels(tpsf, irf, w);
        return add(add(o.tau1, scale(o.tau2, 0.5)), scale(o.a_r, -0.7));
      };
      return GradCase{w.parameters(), forward};
    }, 1e-4));
  }
  return s;
}

}  // namespace flilab
