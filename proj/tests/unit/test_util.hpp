#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <set>
#include <span>
#include <vector>

#include "flilab/rng.hpp"
#include "flilab/tensor.hpp"

namespace flilab::testing {

inline Tensor random_tensor(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Plain row-major matrix helpers used as independent oracles.
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = t.data()[offset + r * cols + c];
  return m;
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

// softmax(q kᵀ / sqrt(d)) v by explicit loops.
inline Mat naive_attention(const Mat& q, const Mat& k, const Mat& v) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    double mx = -1e300;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < q[0].size(); ++c) dot += q[i][c] * k[j][c];
      s[j] = dot * inv;
      mx = std::max(mx, s[j]);
    }
    double total = 0;
    for (double& x : s) total += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += s[j] / total * v[j][c];
  }
  return out;
}

// Central-difference gradient of a scalar function of the tensor's values.
inline std::vector<double> numeric_grad(Tensor& x, const std::function<double()>& f, double h = 1e-6) {
  auto d = x.mutable_data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double orig = d[i];
    const double step = h * std::max(1.0, std::fabs(orig));
    d[i] = orig + step;
    const double fp = f();
    d[i] = orig - step;
    const double fm = f();
    d[i] = orig;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

inline double max_rel_error(std::span<const double> a, std::span<const double> n, double floor = 1e-8) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - n[i]) / std::max({std::fabs(a[i]), std::fabs(n[i]), floor}));
  return m;
}

}  // namespace flilab::testing
