#include "flilab/attention.hpp"

#include <algorithm>
#include <cmath>

#include "flilab/error.hpp"

namespace flilab {
namespace {

Tensor uniform_matrix(std::size_t rows, std::size_t cols, double bound, CounterRng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor({rows, cols}, std::move(v), true);
}

void check_square(const Tensor& w, std::size_t d, const char* name) {
  if (!w.defined() || w.shape() != Shape{d, d})
    throw DimensionError(std::string("attention: ") + name + " must be [" + std::to_string(d) + ", " +
                         std::to_string(d) + "]");
}

// [..., L, d] -> [B, L, d] with B the product of the leading axes.
Tensor as_batched(const Tensor& x, std::size_t d, const char* op) {
  if (x.rank() < 2) throw DimensionError(std::string(op) + ": input must have rank >= 2, got " + to_string(x.shape()));
  if (x.dim(-1) != d)
    throw DimensionError(std::string(op) + ": last axis " + std::to_string(x.dim(-1)) + " != d_model " +
                         std::to_string(d));
  const std::size_t l = x.dim(-2);
  return reshape(x, {x.size() / (l * d), l, d});
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

Tensor head_attention(const Tensor& xq, const Tensor& xkv, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      std::size_t heads) {
  return multi_head_attention(matmul(xq, wq), matmul(xkv, wk), matmul(xkv, wv), heads);
}

}  // namespace

std::size_t AttentionWeights::d_model() const {
  if (!wq1.defined()) throw StateError("attention: weights not initialised");
  return wq1.dim(0);
}

AttentionWeights AttentionWeights::init(std::size_t d_model, std::size_t heads, bool differential, CounterRng& rng) {
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("model.heads", "d_model must be divisible by the head count");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  AttentionWeights w;
  w.heads = heads;
  w.wq1 = uniform_matrix(d_model, d_model, bound, rng);
  w.wk1 = uniform_matrix(d_model, d_model, bound, rng);
  w.wv1 = uniform_matrix(d_model, d_model, bound, rng);
  if (differential) {
    w.wq2 = uniform_matrix(d_model, d_model, bound, rng);
    w.wk2 = uniform_matrix(d_model, d_model, bound, rng);
    w.wv2 = uniform_matrix(d_model, d_model, bound, rng);
    w.lambda = Tensor({1}, {0.8}, true);
  }
  w.wo = uniform_matrix(d_model, d_model, bound, rng);
  return w;
}

void AttentionWeights::validate() const {
  const std::size_t d = d_model();
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: d_model must be divisible by heads");
  check_square(wq1, d, "wq1");
  check_square(wk1, d, "wk1");
  check_square(wv1, d, "wv1");
  check_square(wo, d, "wo");
  if (differential()) {
    check_square(wq2, d, "wq2");
    check_square(wk2, d, "wk2");
    check_square(wv2, d, "wv2");
    if (lambda.shape() != Shape{1}) throw DimensionError("attention: lambda must have shape [1]");
    if (!std::isfinite(lambda.item())) throw NumericalError("attention: lambda is not finite");
  }
}

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2) throw DimensionError("scaled_attention: inputs must have rank >= 2");
  if (q.dim(-1) != k.dim(-1))
    throw DimensionError("scaled_attention: d_k mismatch, Q " + to_string(q.shape()) + " vs K " + to_string(k.shape()));
  if (k.dim(-2) != v.dim(-2))
    throw DimensionError("scaled_attention: K " + to_string(k.shape()) + " and V " + to_string(v.shape()) +
                         " differ in length");
  const std::size_t lq = q.dim(-2), lk = k.dim(-2), dk = q.dim(-1);
  const std::size_t batch = q.size() / (lq * dk);
  if (k.size() / (lk * dk) != batch || v.size() / (lk * v.dim(-1)) != batch || q.rank() != k.rank() ||
      q.rank() != v.rank() || !std::equal(q.shape().begin(), q.shape().end() - 2, k.shape().begin()) ||
      !std::equal(q.shape().begin(), q.shape().end() - 2, v.shape().begin()))
    throw DimensionError("scaled_attention: leading axes differ, Q " + to_string(q.shape()) + " vs K " +
                         to_string(k.shape()) + " vs V " + to_string(v.shape()));
  if (v.dim(-1) == dk)
    return reshape(multi_head_attention(reshape(q, {batch, lq, dk}), reshape(k, {batch, lk, dk}),
                                        reshape(v, {batch, lk, dk}), 1),
                   q.shape());
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  return matmul(softmax(scale(matmul_bt(q, k), inv), -1), v);
}

Tensor self_attention_heads(const Tensor& x, const AttentionWeights& w) {
  const std::size_t d = w.d_model();
  const Tensor xb = as_batched(x, d, "self_attention");
  Tensor out = head_attention(xb, xb, w.wq1, w.wk1, w.wv1, w.heads);
  if (w.differential()) out = sub(out, mul(w.lambda, head_attention(xb, xb, w.wq2, w.wk2, w.wv2, w.heads)));
  return reshape(out, x.shape());
}

Tensor diff_attention(const Tensor& x, const AttentionWeights& w) {
  if (!w.differential()) throw ContractError("diff_attention: layer has no second projection set");
  return matmul(self_attention_heads(x, w), w.wo);
}

Tensor standard_attention(const Tensor& x, const AttentionWeights& w) {
  const std::size_t d = w.d_model();
  const Tensor xb = as_batched(x, d, "standard_attention");
  return reshape(matmul(head_attention(xb, xb, w.wq1, w.wk1, w.wv1, w.heads), w.wo), x.shape());
}

Tensor cross_attention(const Tensor& xq, const Tensor& e, const AttentionWeights& w) {
  const std::size_t d = w.d_model();
  if (e.rank() < 2 || e.dim(-1) != d)
    throw DimensionError("cross_attention: d_model mismatch, Xq " + to_string(xq.shape()) + " vs E " +
                         to_string(e.shape()));
  const Tensor qb = as_batched(xq, d, "cross_attention");
  const Tensor eb = as_batched(e, d, "cross_attention");
  if (qb.dim(0) != eb.dim(0))
    throw DimensionError("cross_attention: batch mismatch, Xq " + to_string(xq.shape()) + " vs E " +
                         to_string(e.shape()));
  const Tensor out = matmul(head_attention(qb, eb, w.wq1, w.wk1, w.wv1, w.heads), w.wo);
  return reshape(out, with_last(xq.shape(), d));
}

}  // namespace flilab
