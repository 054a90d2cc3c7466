#include "flilab/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "flilab/error.hpp"
#include "flilab/parallel.hpp"
#include "flilab/tensor_io.hpp"

namespace flilab {
namespace {

Tensor uniform(Shape shape, double bound, CounterRng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

LayerNormWeights init_norm(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

FfnWeights init_ffn(std::size_t d, std::size_t hidden, CounterRng& rng) {
  const double bd = 1.0 / std::sqrt(static_cast<double>(d));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  FfnWeights f;
  f.w1 = uniform({d, hidden}, bd, rng);
  f.b1 = Tensor::zeros({hidden}, true);
  f.w2 = uniform({d, hidden}, bd, rng);
  f.b2 = Tensor::zeros({hidden}, true);
  f.w3 = uniform({hidden, d}, bh, rng);
  f.b3 = Tensor::zeros({d}, true);
  return f;
}

EmbedWeights init_embed(std::size_t gates, std::size_t d, CounterRng& rng) {
  return {uniform({1, d}, 1.0, rng), Tensor::zeros({d}, true), positional_encoding(gates, d)};
}

void add_attention(std::vector<NamedTensor>& out, const std::string& p, AttentionWeights& a) {
  out.push_back({p + ".wq1", &a.wq1, true});
  out.push_back({p + ".wk1", &a.wk1, true});
  out.push_back({p + ".wv1", &a.wv1, true});
  if (a.differential()) {
    out.push_back({p + ".wq2", &a.wq2, true});
    out.push_back({p + ".wk2", &a.wk2, true});
    out.push_back({p + ".wv2", &a.wv2, true});
    out.push_back({p + ".lambda", &a.lambda, true});
  }
  out.push_back({p + ".wo", &a.wo, true});
}

void add_norm(std::vector<NamedTensor>& out, const std::string& p, LayerNormWeights& n) {
  out.push_back({p + ".gain", &n.gain, true});
  out.push_back({p + ".bias", &n.bias, true});
}

void add_ffn(std::vector<NamedTensor>& out, const std::string& p, FfnWeights& f) {
  out.push_back({p + ".w1", &f.w1, true});
  out.push_back({p + ".b1", &f.b1, true});
  out.push_back({p + ".w2", &f.w2, true});
  out.push_back({p + ".b2", &f.b2, true});
  out.push_back({p + ".w3", &f.w3, true});
  out.push_back({p + ".b3", &f.b3, true});
}

Tensor self_attention(const Tensor& x, const AttentionWeights& w) {
  return w.differential() ? diff_attention(x, w) : standard_attention(x, w);
}

Tensor norm(const Tensor& x, const LayerNormWeights& w) { return layer_norm(x, w.gain, w.bias); }

Tensor head(const Tensor& pooled, const HeadWeights& h) {
  const Tensor y = elu(add(matmul(pooled, h.w), h.b));
  return reshape(y, {pooled.dim(0)});
}

constexpr const char* kHeadNames[3] = {"tau1", "tau2", "a_r"};
constexpr double kHeadBias[3] = {0.5, 1.15, 0.5};

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0) throw ConfigError("model.d_model", "must be positive");
  if (heads == 0) throw ConfigError("model.heads", "must be positive");
  if (d_model % heads != 0) throw ConfigError("model.heads", "d_model must be divisible by heads");
  if (encoder_blocks != 2) throw ConfigError("model.encoder_blocks", "the architecture has exactly 2 encoder blocks");
  if (decoder_blocks != 2) throw ConfigError("model.decoder_blocks", "the architecture has exactly 2 decoder blocks");
  if (gates < 2) throw ConfigError("model.gates", "must be at least 2");
  if (image_side == 0) throw ConfigError("model.image_side", "must be positive");
}

Tensor positional_encoding(std::size_t gates, std::size_t d_model) {
  std::vector<double> v(gates * d_model);
  for (std::size_t p = 0; p < gates; ++p) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d_model));
      const double a = static_cast<double>(p) * freq;
      v[p * d_model + j] = j % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor({gates, d_model}, std::move(v));
}

MFliNetWeights MFliNetWeights::init(const ModelConfig& cfg) {
  cfg.validate();
  CounterRng rng(cfg.seed, 0x6d6f64656cULL);
  const std::size_t d = cfg.d_model;
  const bool diff = cfg.attention == AttentionKind::differential;
  MFliNetWeights w;
  w.config = cfg;
  w.irf_embed = init_embed(cfg.gates, d, rng);
  w.tpsf_embed = init_embed(cfg.gates, d, rng);
  for (std::size_t i = 0; i < cfg.encoder_blocks; ++i) {
    EncoderWeights e;
    e.attn = AttentionWeights::init(d, cfg.heads, diff, rng);
    e.norm1 = init_norm(d);
    e.ffn = init_ffn(d, cfg.hidden(), rng);
    e.norm2 = init_norm(d);
    w.encoders.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < cfg.decoder_blocks; ++i) {
    DecoderWeights dw;
    dw.self_attn = AttentionWeights::init(d, cfg.heads, diff, rng);
    dw.norm1 = init_norm(d);
    dw.cross_attn = AttentionWeights::init(d, cfg.heads, false, rng);
    dw.norm2 = init_norm(d);
    dw.ffn = init_ffn(d, cfg.hidden(), rng);
    dw.norm3 = init_norm(d);
    w.decoders.push_back(std::move(dw));
  }
  for (std::size_t h = 0; h < 3; ++h) {
    w.heads[h].w = uniform({d, 1}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    w.heads[h].b = Tensor({1}, {kHeadBias[h]}, true);
  }
  // Stored weights are float32; start from representable values so a saved
  // and reloaded model computes exactly what the in-memory one does.
  for (auto& t : w.tensors())
    for (double& v : t.tensor->mutable_data()) v = static_cast<double>(static_cast<float>(v));
  return w;
}

std::vector<NamedTensor> MFliNetWeights::tensors() {
  std::vector<NamedTensor> out;
  for (auto [name, e] : {std::pair<const char*, EmbedWeights*>{"irf_embed", &irf_embed}, {"tpsf_embed", &tpsf_embed}}) {
    out.push_back({std::string(name) + ".w", &e->w, true});
    out.push_back({std::string(name) + ".b", &e->b, true});
    out.push_back({std::string(name) + ".position", &e->position, false});
  }
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    const std::string p = "encoder" + std::to_string(i);
    add_attention(out, p + ".attn", encoders[i].attn);
    add_norm(out, p + ".norm1", encoders[i].norm1);
    add_ffn(out, p + ".ffn", encoders[i].ffn);
    add_norm(out, p + ".norm2", encoders[i].norm2);
  }
  for (std::size_t i = 0; i < decoders.size(); ++i) {
    const std::string p = "decoder" + std::to_string(i);
    add_attention(out, p + ".self_attn", decoders[i].self_attn);
    add_norm(out, p + ".norm1", decoders[i].norm1);
    add_attention(out, p + ".cross_attn", decoders[i].cross_attn);
    add_norm(out, p + ".norm2", decoders[i].norm2);
    add_ffn(out, p + ".ffn", decoders[i].ffn);
    add_norm(out, p + ".norm3", decoders[i].norm3);
  }
  for (std::size_t h = 0; h < 3; ++h) {
    const std::string p = std::string("head.") + kHeadNames[h];
    out.push_back({p + ".w", &heads[h].w, true});
    out.push_back({p + ".b", &heads[h].b, true});
  }
  return out;
}

std::vector<Tensor> MFliNetWeights::parameters() {
  std::vector<Tensor> out;
  for (auto& t : tensors())
    if (t.trainable) out.push_back(*t.tensor);
  return out;
}

std::size_t MFliNetWeights::parameter_count() {
  std::size_t n = 0;
  for (auto& t : parameters()) n += t.size();
  return n;
}

MFliNetWeights MFliNetWeights::clone() const {
  MFliNetWeights c = *this;
  for (auto& t : c.tensors()) {
    const auto v = t.tensor->data();
    *t.tensor = Tensor(t.tensor->shape(), std::vector<double>(v.begin(), v.end()), t.tensor->requires_grad());
  }
  return c;
}

Tensor embed_sequence(const Tensor& hist, const EmbedWeights& w) {
  const std::size_t gates = w.position.dim(0);
  if (hist.rank() < 1 || hist.dim(-1) != gates)
    throw DimensionError("embed_sequence: histogram " + to_string(hist.shape()) + " does not have " +
                         std::to_string(gates) + " gates");
  Shape col = hist.shape();
  col.push_back(1);
  return add(add(matmul(reshape(hist, col), w.w), w.b), w.position);
}

Tensor embed_sequence(const TimeHistogram& hist, const EmbedWeights& w) {
  return embed_sequence(Tensor({hist.size()}, hist.counts), w);
}

Tensor swiglu_ffn(const Tensor& x, const FfnWeights& w) {
  const Tensor gate = swish(add(matmul(x, w.w1), w.b1));
  const Tensor lin = add(matmul(x, w.w2), w.b2);
  return add(matmul(mul(gate, lin), w.w3), w.b3);
}

Tensor encoder_block(const Tensor& x, const EncoderWeights& w) {
  const Tensor h = norm(add(x, self_attention(x, w.attn)), w.norm1);
  return norm(add(h, swiglu_ffn(h, w.ffn)), w.norm2);
}

Tensor decoder_block(const Tensor& x, const Tensor& e, const DecoderWeights& w) {
  const Tensor h1 = norm(add(x, self_attention(x, w.self_attn)), w.norm1);
  const Tensor h2 = norm(add(h1, cross_attention(h1, e, w.cross_attn)), w.norm2);
  return norm(add(h2, swiglu_ffn(h2, w.ffn)), w.norm3);
}

HeadOutputs forward_pixels(const Tensor& tpsf, const Tensor& irf, const MFliNetWeights& w) {
  if (tpsf.rank() != 2 || tpsf.shape() != irf.shape())
    throw DimensionError("forward_pixels: expected matching [B, G] inputs, got " + to_string(tpsf.shape()) + " and " +
                         to_string(irf.shape()));
  Tensor e = embed_sequence(irf, w.irf_embed);
  for (const auto& enc : w.encoders) e = encoder_block(e, enc);
  Tensor x = embed_sequence(tpsf, w.tpsf_embed);
  for (const auto& dec : w.decoders) x = decoder_block(x, e, dec);
  const Tensor pooled = mean_axis(x, 1);
  return {head(pooled, w.heads[0]), head(pooled, w.heads[1]), head(pooled, w.heads[2])};
}

Tensor normalized_batch(const std::vector<float>& stack, std::size_t gates, const std::vector<std::size_t>& pixels) {
  std::vector<double> v(pixels.size() * gates);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float* src = stack.data() + pixels[i] * gates;
    double* dst = v.data() + i * gates;
    double peak = 0;
    for (std::size_t g = 0; g < gates; ++g) peak = std::max(peak, static_cast<double>(src[g]));
    const double inv = peak > 0 ? 1.0 / peak : 0.0;
    for (std::size_t g = 0; g < gates; ++g) dst[g] = static_cast<double>(src[g]) * inv;
  }
  return Tensor({pixels.size(), gates}, std::move(v));
}

LifetimeMaps forward(const FliDataset& ds, std::size_t sample, const MFliNetWeights& w) {
  const auto& cfg = w.config;
  if (ds.height != cfg.image_side || ds.width != cfg.image_side)
    throw DimensionError("forward: image " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                         " is not " + std::to_string(cfg.image_side) + "x" + std::to_string(cfg.image_side));
  if (ds.gates() != cfg.gates) throw DimensionError("forward: dataset has " + std::to_string(ds.gates()) + " gates");
  if (sample >= ds.samples) throw DimensionError("forward: sample index out of range");
  const std::size_t n = cfg.image_side * cfg.image_side;
  std::vector<std::size_t> pixels(n);
  for (std::size_t i = 0; i < n; ++i) pixels[i] = sample * n + i;
  const auto out = forward_pixels(normalized_batch(ds.tpsf, ds.gates(), pixels), normalized_batch(ds.irf, ds.gates(), pixels), w);
  LifetimeMaps m;
  m.side = cfg.image_side;
  auto copy = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  m.tau1 = copy(out.tau1);
  m.tau2 = copy(out.tau2);
  m.a_r = copy(out.a_r);
  return m;
}

Prediction predict(const FliDataset& ds, const MFliNetWeights& w, unsigned threads, std::size_t batch) {
  ds.validate();
  if (ds.gates() != w.config.gates)
    throw DimensionError("predict: dataset has " + std::to_string(ds.gates()) + " gates, model expects " +
                         std::to_string(w.config.gates));
  if (batch == 0) throw ConfigError("predict.batch", "must be positive");
  Prediction p;
  p.samples = ds.samples;
  p.height = ds.height;
  p.width = ds.width;
  p.tau1.assign(ds.pixels(), 0.0f);
  p.tau2.assign(ds.pixels(), 0.0f);
  p.a_r.assign(ds.pixels(), 0.0f);
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < ds.pixels(); ++i)
    if (ds.foreground(i)) fg.push_back(i);
  p.pixels_evaluated = fg.size();
  const std::size_t batches = (fg.size() + batch - 1) / batch;
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(batches, threads, [&](std::size_t b) {
    const auto begin = fg.begin() + static_cast<std::ptrdiff_t>(b * batch);
    const auto end = fg.begin() + static_cast<std::ptrdiff_t>(std::min(fg.size(), (b + 1) * batch));
    const std::vector<std::size_t> idx(begin, end);
    const auto out = forward_pixels(normalized_batch(ds.tpsf, ds.gates(), idx), normalized_batch(ds.irf, ds.gates(), idx), w);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      p.tau1[idx[i]] = static_cast<float>(std::max(out.tau1.data()[i], 1e-6));
      p.tau2[idx[i]] = static_cast<float>(std::max(out.tau2.data()[i], 1e-6));
      p.a_r[idx[i]] = static_cast<float>(std::clamp(out.a_r.data()[i], 0.0, 1.0));
    }
  });
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return p;
}

void save_weights(MFliNetWeights& w, const std::string& path) {
  std::vector<StoredTensor> out;
  for (const auto& t : w.tensors()) out.push_back(to_stored(t.name, *t.tensor));
  write_tensor_file(path, kWeightsMagic, out);
}

MFliNetWeights load_weights(const std::string& path, const ModelConfig& cfg) {
  MFliNetWeights w = MFliNetWeights::init(cfg);
  std::map<std::string, Tensor*> expected;
  for (const auto& t : w.tensors()) expected[t.name] = t.tensor;
  std::map<std::string, bool> seen;
  const auto stored = read_tensor_file(path, kWeightsMagic, [&](const std::string& name, const Shape& shape) {
    const auto it = expected.find(name);
    if (it == expected.end())
      throw FormatError(FormatErrorCode::shape_mismatch, "tensor " + name + " does not exist in the configured model");
    if (seen[name]) throw FormatError(FormatErrorCode::shape_mismatch, "tensor " + name + " appears twice");
    seen[name] = true;
    if (shape != it->second->shape())
      throw FormatError(FormatErrorCode::shape_mismatch, "tensor " + name + " has shape " + to_string(shape) +
                                                             ", expected " + to_string(it->second->shape()));
  });
  for (const auto& s : stored) assign_stored(s, *expected.at(s.name));
  for (const auto& [name, t] : expected)
    if (!seen.count(name)) throw FormatError(FormatErrorCode::missing_tensor, "tensor " + name + " not found in " + path);
  return w;
}

}  // namespace flilab
