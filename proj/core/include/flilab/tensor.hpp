#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flilab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tape;

/// Dense row-major array of doubles with optional reverse-mode gradient.
///
/// A Tensor is a cheap handle: copies share the same storage. Operations
/// never modify their inputs; they allocate a fresh output node and, when a
/// Tape is active on the calling thread and some input requires a gradient,
/// record a backward rule on that tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::ptrdiff_t axis) const;

  std::span<const double> data() const;
  /// In-place access for leaf tensors (parameter updates, test fixtures).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Accumulated gradient; throws StateError when none has been populated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Value copy that is not connected to any tape.
  Tensor detach() const;

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  // Internal access for operation implementations.
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations.
///
/// Constructing a Tape makes it the active tape of the current thread until
/// it is destroyed (tapes nest). Replaying the record in reverse is a valid
/// topological order because an entry is appended only after all of its
/// inputs exist. A tape can be consumed once; `reset()` clears it for reuse.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable input.
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  static Tape* active() noexcept;

  using BackwardFn = std::function<void()>;
  void record(std::string_view op, std::vector<std::shared_ptr<detail::Node>> inputs,
              std::shared_ptr<detail::Node> output, BackwardFn rule);

 private:
  struct Entry {
    std::string_view op;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    BackwardFn rule;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

// ---- elementwise, with trailing-dimension broadcasting ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor exp(const Tensor& x);

/// Elementwise op from a value function and its derivative `df(x, y)`.
/// Exposed for tests that need an operation with a known-bad gradient rule.
Tensor map_unary(const Tensor& x, std::string_view name, std::function<double(double)> f,
                 std::function<double(double, double)> df);

// ---- linear algebra ----
/// a: [..., m, k], b: [k, n] (shared) or [..., k, n] (same leading dims).
Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ over the last two axes; b: [n, k] or [..., n, k].
Tensor matmul_bt(const Tensor& a, const Tensor& b);

/// Multi-head softmax(Q_h K_hᵀ / sqrt(d_h)) V_h with heads packed along the
/// last axis: q [B, Lq, d], k and v [B, Lk, d], d = heads * d_h. Returns the
/// concatenated head outputs [B, Lq, d]. Probabilities are recomputed in the
/// backward pass rather than stored.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// ---- normalisation ----
Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);
/// Normalises over the last axis; gain and bias have shape [last].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---- reductions and layout ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);

}  // namespace flilab
