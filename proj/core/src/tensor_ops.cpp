#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "flilab/error.hpp"
#include "flilab/tensor.hpp"
#include "tensor_node.hpp"

namespace flilab {
namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor make_tensor(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return Tensor(std::move(node));
}

// Records `rule` when a tape is active and some input needs a gradient.
template <class Rule>
void track(std::string_view op, Tensor& out, std::initializer_list<const Tensor*> inputs, Rule&& rule) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool any = false;
  for (auto* t : inputs) any = any || t->requires_grad();
  if (!any) return;
  out.node()->requires_grad = true;
  std::vector<NodePtr> in;
  in.reserve(inputs.size());
  for (auto* t : inputs) in.push_back(t->node());
  tape->record(op, std::move(in), out.node(), std::forward<Rule>(rule));
}

double* grad_of(detail::Node* n) { return n->requires_grad ? n->grad_buffer().data() : nullptr; }

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, std::string_view op) {
  auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(axis);
}

// ---------------------------------------------------------------------------
// Broadcasting (trailing-dimension alignment, size-1 dims stretch).

struct BroadcastPlan {
  Shape out;
  std::size_t n = 0;
  bool general = false;
  bool a_full = true;  // when !general: one operand spans `out`, the other repeats with `period`
  std::size_t period = 0;
  std::vector<std::size_t> ia, ib;  // general case only
};

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i + 1 < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& x, const Shape& out) {
  auto sx = strip_leading_ones(x);
  if (sx.size() > out.size()) return false;
  return std::equal(sx.begin(), sx.end(), out.end() - static_cast<std::ptrdiff_t>(sx.size()));
}

std::vector<std::size_t> broadcast_map(const Shape& x, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < x.size(); ++k) {
    std::size_t ax = x.size() - 1 - k;
    std::size_t ao = r - 1 - k;
    stride[ao] = x[ax] == 1 ? 0 : s;
    s *= x[ax];
  }
  std::vector<std::size_t> map(numel(out));
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = off;
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      off += stride[k];
      if (idx[k] < out[k]) break;
      off -= stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return map;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  BroadcastPlan p;
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                           " are not broadcastable");
    p.out[r - 1 - k] = std::max(da, db);
  }
  p.n = numel(p.out);
  const std::size_t na = numel(a), nb = numel(b);
  if (na == p.n && is_suffix(b, p.out)) {
    p.a_full = true;
    p.period = nb;
  } else if (nb == p.n && is_suffix(a, p.out)) {
    p.a_full = false;
    p.period = na;
  } else {
    p.general = true;
    p.ia = broadcast_map(a, p.out);
    p.ib = broadcast_map(b, p.out);
  }
  return p;
}

// Calls fn(i_out, i_a, i_b) for every output element.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  if (p.general) {
    for (std::size_t i = 0; i < p.n; ++i) fn(i, p.ia[i], p.ib[i]);
  } else if (p.a_full) {
    for (std::size_t base = 0; base < p.n; base += p.period)
      for (std::size_t j = 0; j < p.period; ++j) fn(base + j, base + j, j);
  } else {
    for (std::size_t base = 0; base < p.n; base += p.period)
      for (std::size_t j = 0; j < p.period; ++j) fn(base + j, j, base + j);
  }
}

// f(x, y) -> z; da(x, y, z) and db(x, y, z) are the partial derivatives.
template <class F, class DA, class DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), op));
  std::vector<double> z(plan->n);
  {
    const double* x = a.data().data();
    const double* y = b.data().data();
    for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { z[i] = f(x[ia], y[ib]); });
  }
  Tensor out = make_tensor(plan->out, std::move(z));
  detail::Node* na = a.node().get();
  detail::Node* nb = b.node().get();
  detail::Node* no = out.node().get();
  track(op, out, {&a, &b}, [=]() {
    const double* x = na->value.data();
    const double* y = nb->value.data();
    const double* zv = no->value.data();
    const double* g = no->grad.data();
    double* gx = grad_of(na);
    double* gy = grad_of(nb);
    for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (gx) gx[ia] += g[i] * da(x[ia], y[ib], zv[i]);
      if (gy) gy[ib] += g[i] * db(x[ia], y[ib], zv[i]);
    });
  });
  return out;
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class F, class DF>
Tensor unary(std::string_view op, const Tensor& a, F f, DF df) {
  const auto xs = a.data();
  std::vector<double> y(xs.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  Tensor out = make_tensor(a.shape(), std::move(y));
  detail::Node* na = a.node().get();
  detail::Node* no = out.node().get();
  track(op, out, {&a}, [=]() {
    double* gx = grad_of(na);
    const double* g = no->grad.data();
    for (std::size_t i = 0; i < no->value.size(); ++i) gx[i] += g[i] * df(na->value[i], no->value[i]);
  });
  return out;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Matrix products.

struct MatmulDims {
  std::size_t batch = 1;  // number of leading matrices in `a`
  std::size_t m = 0, k = 0, n = 0;
  bool shared_b = true;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool bt, std::string_view op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&]() {
    return DimensionError(std::string(op) + ": incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  MatmulDims d;
  d.m = sa[sa.size() - 2];
  d.k = sa.back();
  const std::size_t bk = bt ? sb.back() : sb[sb.size() - 2];
  d.n = bt ? sb[sb.size() - 2] : sb.back();
  if (bk != d.k) throw mismatch();
  d.batch = numel(sa) / (d.m * d.k);
  if (sb.size() == 2) {
    d.shared_b = true;
  } else {
    if (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) throw mismatch();
    d.shared_b = false;
  }
  return d;
}

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool bt, std::string_view op) {
  const MatmulDims d = matmul_dims(a, b, bt, op);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(d.n);
  std::vector<double> c(d.batch * d.m * d.n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  const Eigen::Index bk_rows = bt ? d.n : d.k, bk_cols = bt ? d.k : d.n;
  if (d.shared_b) {
    ConstMap A(pa, d.batch * d.m, d.k);
    ConstMap B(pb, bk_rows, bk_cols);
    MutMap C(c.data(), d.batch * d.m, d.n);
    if (bt)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  } else {
    for (std::size_t s = 0; s < d.batch; ++s) {
      ConstMap A(pa + s * d.m * d.k, d.m, d.k);
      ConstMap B(pb + s * d.k * d.n, bk_rows, bk_cols);
      MutMap C(c.data() + s * d.m * d.n, d.m, d.n);
      if (bt)
        C.noalias() = A * B.transpose();
      else
        C.noalias() = A * B;
    }
  }
  Tensor out = make_tensor(std::move(out_shape), std::move(c));
  detail::Node* na = a.node().get();
  detail::Node* nb = b.node().get();
  detail::Node* no = out.node().get();
  track(op, out, {&a, &b}, [=]() {
    double* ga = grad_of(na);
    double* gb = grad_of(nb);
    const std::size_t groups = d.shared_b ? 1 : d.batch;
    const std::size_t rows = d.shared_b ? d.batch * d.m : d.m;
    for (std::size_t s = 0; s < groups; ++s) {
      ConstMap A(na->value.data() + s * rows * d.k, rows, d.k);
      ConstMap B(nb->value.data() + s * d.k * d.n, bk_rows, bk_cols);
      ConstMap G(no->grad.data() + s * rows * d.n, rows, d.n);
      if (ga) {
        MutMap GA(ga + s * rows * d.k, rows, d.k);
        if (bt)
          GA.noalias() += G * B;
        else
          GA.noalias() += G * B.transpose();
      }
      if (gb) {
        MutMap GB(gb + s * d.k * d.n, bk_rows, bk_cols);
        if (bt)
          GB.noalias() += G.transpose() * A;
        else
          GB.noalias() += A.transpose() * G;
      }
    }
  });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor swish(const Tensor& x) {
  return unary(
      "swish", x, [](double v) { return v * sigmoid_value(v); },
      [](double v, double) {
        double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary(
      "elu", x, [alpha](double v) { return v >= 0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v >= 0 ? 1.0 : y + alpha; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor map_unary(const Tensor& x, std::string_view name, std::function<double(double)> f,
                 std::function<double(double, double)> df) {
  return unary(name, x, std::move(f), std::move(df));
}

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false, "matmul"); }
Tensor matmul_bt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true, "matmul_bt"); }

namespace {

using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Row-wise softmax of s * scale, in place.
void softmax_rows(RowMat& s, double scale) {
  const Eigen::Index n = s.cols();
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    Eigen::Map<Eigen::ArrayXd> row(s.data() + r * n, n);
    row = ((row - row.maxCoeff()) * scale).exp();
    row *= 1.0 / row.sum();
  }
}

// dp <- p * (dp - rowdot(dp, p)) * scale, the softmax backward of each row.
void softmax_rows_backward(const RowMat& p, RowMat& dp, double scale) {
  const Eigen::Index n = p.cols();
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    Eigen::Map<const Eigen::ArrayXd> pr(p.data() + r * n, n);
    Eigen::Map<Eigen::ArrayXd> gr(dp.data() + r * n, n);
    const double dot = (gr * pr).sum();
    gr = pr * (gr - dot) * scale;
  }
}

}  // namespace

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  auto fail = [&](const std::string& why) {
    return DimensionError("multi_head_attention: " + why + " (Q " + to_string(q.shape()) + ", K " +
                          to_string(k.shape()) + ", V " + to_string(v.shape()) + ")");
  };
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw fail("inputs must be [B, L, d]");
  if (k.shape() != v.shape()) throw fail("K and V shapes differ");
  const std::size_t b = q.dim(0), lq = q.dim(1), d = q.dim(2), lk = k.dim(1);
  if (k.dim(0) != b) throw fail("batch sizes differ");
  if (k.dim(2) != d) throw fail("model widths differ");
  if (heads == 0 || d % heads != 0) throw fail("width not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
  const auto rq = static_cast<Eigen::Index>(lq), rk = static_cast<Eigen::Index>(lk),
             ch = static_cast<Eigen::Index>(dh);

  std::vector<double> out_v(b * lq * d);
  {
    const double* pq = q.data().data();
    const double* pk = k.data().data();
    const double* pv = v.data().data();
    RowMat p(rq, rk);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t oq = s * lq * d + h * dh, ok = s * lk * d + h * dh;
        Strided Q(pq + oq, rq, ch, stride), K(pk + ok, rk, ch, stride), V(pv + ok, rk, ch, stride);
        p.noalias() = Q * K.transpose();
        softmax_rows(p, inv);
        MutStrided O(out_v.data() + oq, rq, ch, stride);
        O.noalias() = p * V;
      }
  }
  Tensor out = make_tensor({b, lq, d}, std::move(out_v));
  detail::Node* nq = q.node().get();
  detail::Node* nk = k.node().get();
  detail::Node* nv = v.node().get();
  detail::Node* no = out.node().get();
  track("multi_head_attention", out, {&q, &k, &v}, [=]() {
    double* gq = grad_of(nq);
    double* gk = grad_of(nk);
    double* gv = grad_of(nv);
    RowMat p(rq, rk), dp(rq, rk);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t oq = s * lq * d + h * dh, ok = s * lk * d + h * dh;
        Strided Q(nq->value.data() + oq, rq, ch, stride), K(nk->value.data() + ok, rk, ch, stride),
            V(nv->value.data() + ok, rk, ch, stride), G(no->grad.data() + oq, rq, ch, stride);
        p.noalias() = Q * K.transpose();
        softmax_rows(p, inv);
        if (gv) MutStrided(gv + ok, rk, ch, stride).noalias() += p.transpose() * G;
        if (!gq && !gk) continue;
        dp.noalias() = G * V.transpose();
        softmax_rows_backward(p, dp, inv);
        if (gq) MutStrided(gq + oq, rq, ch, stride).noalias() += dp * K;
        if (gk) MutStrided(gk + ok, rk, ch, stride).noalias() += dp.transpose() * Q;
      }
  });
  return out;
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = normalize_axis(axis_in, x.rank(), "softmax");
  const auto& s = x.shape();
  const std::size_t len = s[axis];
  const std::size_t inner = std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end(),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t outer = x.size() / (len * inner);
  const auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = xs[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xs[base + l * inner]);
      double total = 0;
      for (std::size_t l = 0; l < len; ++l) {
        double e = std::exp(xs[base + l * inner] - mx);
        y[base + l * inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t l = 0; l < len; ++l) y[base + l * inner] *= inv;
    }
  }
  Tensor out = make_tensor(s, std::move(y));
  detail::Node* nx = x.node().get();
  detail::Node* no = out.node().get();
  track("softmax", out, {&x}, [=]() {
    double* gx = grad_of(nx);
    const double* yv = no->value.data();
    const double* g = no->grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0;
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * yv[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t j = base + l * inner;
          gx[j] += yv[j] * (g[j] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t n = x.dim(-1);
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                         " do not match last axis of " + to_string(x.shape()));
  const std::size_t rows = x.size() / n;
  const auto xs = x.data();
  const auto gs = gain.data();
  const auto bs = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> y(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * n;
    double mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      y[r * n + j] = h * gs[j] + bs[j];
    }
  }
  Tensor out = make_tensor(x.shape(), std::move(y));
  detail::Node* nx = x.node().get();
  detail::Node* ng = gain.node().get();
  detail::Node* nb = bias.node().get();
  detail::Node* no = out.node().get();
  track("layer_norm", out, {&x, &gain, &bias}, [=]() {
    double* gx = grad_of(nx);
    double* gg = grad_of(ng);
    double* gb = grad_of(nb);
    const double* g = no->grad.data();
    const double* gainv = ng->value.data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g + r * n;
      const double* hr = xhat->data() + r * n;
      double m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double dh = gr[j] * gainv[j];
        m1 += dh;
        m2 += dh * hr[j];
        if (gg) gg[j] += gr[j] * hr[j];
        if (gb) gb[j] += gr[j];
      }
      if (gx) {
        m1 *= inv_n;
        m2 *= inv_n;
        const double is = (*inv_std)[r];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += is * (gr[j] * gainv[j] - m1 - hr[j] * m2);
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  const auto xs = x.data();
  double total = 0;
  for (double v : xs) total += v;
  Tensor out = make_tensor({1}, {total});
  detail::Node* nx = x.node().get();
  detail::Node* no = out.node().get();
  track("sum", out, {&x}, [=]() {
    double* gx = grad_of(nx);
    const double g = no->grad[0];
    for (std::size_t i = 0; i < nx->value.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = normalize_axis(axis_in, x.rank(), "mean_axis");
  const auto& s = x.shape();
  const std::size_t len = s[axis];
  const std::size_t inner = std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end(),
                                            std::size_t{1}, std::multiplies<>());
  const std::size_t outer = x.size() / (len * inner);
  Shape out_shape;
  for (std::size_t k = 0; k < s.size(); ++k)
    if (k != axis) out_shape.push_back(s[k]);
  if (out_shape.empty()) out_shape.push_back(1);
  const auto xs = x.data();
  std::vector<double> y(outer * inner, 0.0);
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += xs[(o * len + l) * inner + i];
  for (double& v : y) v *= inv;
  Tensor out = make_tensor(std::move(out_shape), std::move(y));
  detail::Node* nx = x.node().get();
  detail::Node* no = out.node().get();
  track("mean_axis", out, {&x}, [=]() {
    double* gx = grad_of(nx);
    const double* g = no->grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += g[o * inner + i] * inv;
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  const auto xs = x.data();
  Tensor out = make_tensor(std::move(shape), std::vector<double>(xs.begin(), xs.end()));
  detail::Node* nx = x.node().get();
  detail::Node* no = out.node().get();
  track("reshape", out, {&x}, [=]() {
    double* gx = grad_of(nx);
    for (std::size_t i = 0; i < no->grad.size(); ++i) gx[i] += no->grad[i];
  });
  return out;
}

namespace {
// Returns, for each output element of the permuted tensor, its source index.
std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t k = r - 1; k-- > 0;) in_stride[k] = in_stride[k + 1] * in[k + 1];
  Shape out(r);
  std::vector<std::size_t> stride(r);
  for (std::size_t k = 0; k < r; ++k) {
    out[k] = in[axes[k]];
    stride[k] = in_stride[axes[k]];
  }
  std::vector<std::size_t> map(numel(in));
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = off;
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      off += stride[k];
      if (idx[k] < out[k]) break;
      off -= stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return map;
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  if (axes.size() != s.size()) throw DimensionError("permute: axis list does not match rank of " + to_string(s));
  std::vector<bool> seen(s.size(), false);
  for (auto a : axes) {
    if (a >= s.size() || seen[a]) throw DimensionError("permute: invalid axis list");
    seen[a] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) out_shape[k] = s[axes[k]];
  auto map = std::make_shared<std::vector<std::size_t>>(permute_map(s, axes));
  const auto xs = x.data();
  std::vector<double> y(xs.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xs[(*map)[i]];
  Tensor out = make_tensor(std::move(out_shape), std::move(y));
  detail::Node* nx = x.node().get();
  detail::Node* no = out.node().get();
  track("permute", out, {&x}, [=]() {
    double* gx = grad_of(nx);
    for (std::size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += no->grad[i];
  });
  return out;
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.dim(-1);
  if (begin >= end || end > n) throw DimensionError("slice_last: range out of bounds for " + to_string(x.shape()));
  const std::size_t w = end - begin;
  const std::size_t rows = x.size() / n;
  Shape out_shape = x.shape();
  out_shape.back() = w;
  const auto xs = x.data();
  std::vector<double> y(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(r * n + begin), w, y.begin() + static_cast<std::ptrdiff_t>(r * w));
  Tensor out = make_tensor(std::move(out_shape), std::move(y));
  detail::Node* nx = x.node().get();
  detail::Node* no = out.node().get();
  track("slice_last", out, {&x}, [=]() {
    double* gx = grad_of(nx);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * n + begin + j] += no->grad[r * w + j];
  });
  return out;
}

}  // namespace flilab
