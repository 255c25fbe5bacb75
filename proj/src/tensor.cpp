#include "mfnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mfnet {

namespace {

thread_local bool g_grad_mode = true;
bool g_debug_checks = false;

}  // namespace

std::string_view dtype_name(DType dtype) { return dtype == DType::F64 ? "f64" : "f32"; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Buffer::Buffer(DType dtype, std::size_t size) : dtype_(dtype) {
  if (dtype == DType::F64)
    storage_ = std::vector<double>(size, 0.0);
  else
    storage_ = std::vector<float>(size, 0.0f);
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, storage_);
}

void Buffer::fill_zero() {
  std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, storage_);
}

void Node::apply(const Tensor& out) const { fn_(out); }

// --- construction ---------------------------------------------------------

Tensor Tensor::zeros(Shape shape, DType dtype) {
  for (auto e : shape)
    if (e <= 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->data = std::make_shared<Buffer>(dtype, static_cast<std::size_t>(shape_numel(shape)));
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  if (static_cast<std::int64_t>(values.size()) != t.numel())
    throw ConfigError("from_values: " + std::to_string(values.size()) + " values for shape " +
                      shape_str(t.shape()));
  dispatch(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    for (auto& v : t.data<T>()) v = static_cast<T>(rng.uniform(lo, hi));
  });
  return t;
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, Rng& rng, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    for (auto& v : t.data<T>()) v = static_cast<T>(rng.normal(mean, stddev));
  });
  return t;
}

// --- accessors ------------------------------------------------------------

TensorImpl& Tensor::impl() {
  if (!impl_) throw UsageError("undefined tensor");
  return *impl_;
}

const TensorImpl& Tensor::impl() const {
  if (!impl_) throw UsageError("undefined tensor");
  return *impl_;
}

std::int64_t Tensor::dim(int axis) const {
  const auto n = static_cast<int>(ndim());
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) throw UsageError("dim: axis out of range");
  return shape()[static_cast<std::size_t>(a)];
}

double Tensor::at(std::size_t flat) const {
  return dispatch(dtype(), [&]<typename T>() { return static_cast<double>(data<T>()[flat]); });
}

void Tensor::set(std::size_t flat, double value) {
  dispatch(dtype(), [&]<typename T>() { data<T>()[flat] = static_cast<T>(value); });
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf() && !value) throw UsageError("cannot clear requires_grad on a non-leaf tensor");
  impl().requires_grad = value;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  Tensor g = zeros(shape(), dtype());
  if (has_grad()) {
    dispatch(dtype(), [&]<typename T>() {
      auto src = grad<T>();
      std::copy(src.begin(), src.end(), g.data<T>().begin());
    });
  }
  return g;
}

void Tensor::zero_grad() {
  if (impl().grad) impl().grad->fill_zero();
}

void Tensor::clear_grad() { impl().grad.reset(); }

Tensor Tensor::detach() const {
  auto d = std::make_shared<TensorImpl>();
  d->shape = shape();
  d->data = impl().data;
  return Tensor(std::move(d));
}

Tensor Tensor::clone() const { return to(dtype()); }

Tensor Tensor::to(DType target) const {
  Tensor out = zeros(shape(), target);
  out.copy_from(*this);
  return out;
}

void Tensor::copy_from(const Tensor& other) {
  if (other.shape() != shape())
    throw ConfigError("copy_from: shape " + shape_str(other.shape()) + " into " + shape_str(shape()));
  dispatch(dtype(), [&]<typename D>() {
    auto dst = data<D>();
    dispatch(other.dtype(), [&]<typename S>() {
      auto src = other.data<S>();
      std::transform(src.begin(), src.end(), dst.begin(), [](S v) { return static_cast<D>(v); });
    });
  });
}

bool Tensor::all_finite() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return std::all_of(d.begin(), d.end(), [](T v) { return std::isfinite(v); });
  });
}

void Tensor::backward() const { mfnet::backward(*this); }

// --- tape -----------------------------------------------------------------

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks_enabled() { return g_debug_checks; }

namespace {

template <typename Range>
void record_impl(Tensor& out, std::string_view name, const Range& inputs, BackwardFn fn) {
  if (g_debug_checks && !out.all_finite())
    throw InputError(std::string(name) + ": non-finite value in output " + shape_str(out.shape()));
  if (!g_grad_mode) return;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  bool needs = false;
  for (const Tensor& t : inputs) {
    if (!t.defined()) continue;
    parents.push_back(t.impl_ptr());
    needs = needs || t.requires_grad();
  }
  if (!needs) return;
  auto& impl = *out.impl_ptr();
  impl.requires_grad = true;
  impl.grad_fn = std::make_shared<Node>(std::string(name), std::move(parents), std::move(fn));
}

}  // namespace

void record(Tensor& out, std::string_view name, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  record_impl(out, name, inputs, std::move(fn));
}

void record(Tensor& out, std::string_view name, const std::vector<Tensor>& inputs, BackwardFn fn) {
  record_impl(out, name, inputs, std::move(fn));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss");
  if (!loss.requires_grad()) throw UsageError("backward(): loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(loss.impl_ptr(), 0);
  visited.insert(loss.impl_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs().size()) {
      auto child = fn->inputs()[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  dispatch(loss.dtype(), [&]<typename T>() { loss.grad_accumulator<T>()[0] += T(1); });

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& impl = *it;
    if (!impl->grad_fn) continue;
    if (impl->grad) impl->grad_fn->apply(Tensor(impl));
    // Interior gradients are consumed once so a second sweep starts clean.
    impl->grad.reset();
  }
}

}  // namespace mfnet
