#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flilab/attention.hpp"
#include "flilab/histogram.hpp"
#include "flilab/simulate.hpp"
#include "flilab/tensor.hpp"

namespace flilab {

enum class AttentionKind { differential, standard };

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  /// 0 means 4 * d_model.
  std::size_t ffn_hidden = 0;
  std::size_t gates = 176;
  std::size_t image_side = 28;
  AttentionKind attention = AttentionKind::differential;
  std::uint64_t seed = 0;

  std::size_t hidden() const noexcept { return ffn_hidden == 0 ? 4 * d_model : ffn_hidden; }
  void validate() const;
};

struct LayerNormWeights {
  Tensor gain, bias;
};

/// (Swish(x W1 + b1) ⊙ (x W2 + b2)) W3 + b3
struct FfnWeights {
  Tensor w1, b1, w2, b2, w3, b3;
};

struct EncoderWeights {
  AttentionWeights attn;
  LayerNormWeights norm1;
  FfnWeights ffn;
  LayerNormWeights norm2;
};

struct DecoderWeights {
  AttentionWeights self_attn;
  LayerNormWeights norm1;
  AttentionWeights cross_attn;
  LayerNormWeights norm2;
  FfnWeights ffn;
  LayerNormWeights norm3;
};

/// Scalar-to-token embedding of one input stream. `position` is the fixed
/// sinusoidal table; it is serialised with the weights but never trained.
struct EmbedWeights {
  Tensor w;         // [1, d_model]
  Tensor b;         // [d_model]
  Tensor position;  // [G, d_model]
};

/// Pointwise (1x1 convolution) output head.
struct HeadWeights {
  Tensor w;  // [d_model, 1]
  Tensor b;  // [1]
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

struct MFliNetWeights {
  ModelConfig config;
  EmbedWeights irf_embed, tpsf_embed;
  std::vector<EncoderWeights> encoders;
  std::vector<DecoderWeights> decoders;
  std::array<HeadWeights, 3> heads;  // tau1, tau2, a_r

  /// Random initialisation from config.seed.
  static MFliNetWeights init(const ModelConfig& cfg);

  /// Every stored tensor in serialisation order.
  std::vector<NamedTensor> tensors();
  std::vector<Tensor> parameters();
  std::size_t parameter_count();
  /// Deep copy with independent storage.
  MFliNetWeights clone() const;
};

/// Sinusoidal table: even columns sin(p / 10000^(2i/d)), odd columns cos.
Tensor positional_encoding(std::size_t gates, std::size_t d_model);

/// hist: [G] or [B, G] peak-normalised counts -> tokens [..., G, d_model].
Tensor embed_sequence(const Tensor& hist, const EmbedWeights& w);
Tensor embed_sequence(const TimeHistogram& hist, const EmbedWeights& w);

Tensor swiglu_ffn(const Tensor& x, const FfnWeights& w);
Tensor encoder_block(const Tensor& x, const EncoderWeights& w);
Tensor decoder_block(const Tensor& x, const Tensor& e, const DecoderWeights& w);

/// Raw head outputs, each [B].
struct HeadOutputs {
  Tensor tau1, tau2, a_r;
};

/// tpsf, irf: [B, G] peak-normalised histograms.
HeadOutputs forward_pixels(const Tensor& tpsf, const Tensor& irf, const MFliNetWeights& w);

/// Copies pixel histograms into a peak-normalised [count, G] tensor.
Tensor normalized_batch(const std::vector<float>& stack, std::size_t gates, const std::vector<std::size_t>& pixels);

struct LifetimeMaps {
  std::size_t side = 0;
  std::vector<double> tau1, tau2, a_r;  // row-major side x side
};

/// One image of `ds`; requires height == width == config.image_side.
LifetimeMaps forward(const FliDataset& ds, std::size_t sample, const MFliNetWeights& w);

struct Prediction {
  std::size_t samples = 0, height = 0, width = 0;
  std::vector<float> tau1, tau2, a_r;  // [N, H, W], zero on background
  double seconds = 0;                  // wall time of the forward passes
  std::size_t pixels_evaluated = 0;
};

/// Foreground inference over a whole dataset. Outputs are clamped for
/// reporting: a_r to [0, 1] and lifetimes to at least 1e-6 ns.
Prediction predict(const FliDataset& ds, const MFliNetWeights& w, unsigned threads = 1, std::size_t batch = 64);

/// FLW1 container.
void save_weights(MFliNetWeights& w, const std::string& path);
MFliNetWeights load_weights(const std::string& path, const ModelConfig& cfg);

}  // namespace flilab
