#pragma once

#include <cstddef>

#include "flilab/rng.hpp"
#include "flilab/tensor.hpp"

namespace flilab {

/// Projections for one attention layer.
///
/// Each W is [d_model, d_model]: the per-head [d_model, d_head] matrices of
/// all h heads stored side by side, head i owning columns [i*d_head, (i+1)*d_head).
/// The second set (wq2, wk2, wv2) and lambda exist only for differential layers.
struct AttentionWeights {
  std::size_t heads = 1;
  Tensor wq1, wk1, wv1;
  Tensor wq2, wk2, wv2;
  Tensor wo;
  Tensor lambda;  // shape [1]

  bool differential() const noexcept { return lambda.defined(); }
  std::size_t d_model() const;
  std::size_t d_head() const { return d_model() / heads; }

  /// Uniform(-1/sqrt(d_model), 1/sqrt(d_model)) projections; lambda = 0.8.
  static AttentionWeights init(std::size_t d_model, std::size_t heads, bool differential, CounterRng& rng);
  void validate() const;
};

/// softmax(Q Kᵀ / sqrt(d_k)) V over the last two axes; leading axes are batch.
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Concatenated per-head outputs before W^O, shape [..., L, d_model]:
/// differential layers give A1 V1 - lambda A2 V2, standard layers A1 V1.
Tensor self_attention_heads(const Tensor& x, const AttentionWeights& w);

/// self_attention_heads followed by W^O. Requires a differential layer.
Tensor diff_attention(const Tensor& x, const AttentionWeights& w);

/// Standard multi-head self-attention (first projection set only) with W^O.
Tensor standard_attention(const Tensor& x, const AttentionWeights& w);

/// Standard multi-head attention with queries from `xq` and keys/values from `e`.
Tensor cross_attention(const Tensor& xq, const Tensor& e, const AttentionWeights& w);

}  // namespace flilab
