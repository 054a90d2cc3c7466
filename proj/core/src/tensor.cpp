#include "flilab/tensor.hpp"

#include <sstream>

#include "flilab/error.hpp"
#include "tensor_node.hpp"

namespace flilab {

const char* to_string(FormatErrorCode code) noexcept {
  switch (code) {
    case FormatErrorCode::bad_magic: return "bad magic";
    case FormatErrorCode::unsupported_version: return "unsupported version";
    case FormatErrorCode::truncated: return "truncated file";
    case FormatErrorCode::shape_mismatch: return "shape mismatch";
    case FormatErrorCode::missing_tensor: return "missing tensor";
  }
  return "format error";
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  if (numel(shape) != data.size())
    throw DimensionError("tensor shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

namespace {
const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw StateError("use of an undefined tensor");
  return *n;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::size_t Tensor::size() const { return checked(node_).value.size(); }

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + to_string(shape()));
  return shape()[static_cast<std::size_t>(axis)];
}

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(data().begin(), data().end())); }

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(std::string_view op, std::vector<std::shared_ptr<detail::Node>> inputs,
                  std::shared_ptr<detail::Node> output, BackwardFn rule) {
  if (consumed_) throw StateError("cannot record on a consumed tape; call reset() first");
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw StateError("backward already ran on this tape");
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) throw ContractError("loss is not connected to any tensor that requires grad");

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->rule();
  }
  consumed_ = true;
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

}  // namespace flilab
