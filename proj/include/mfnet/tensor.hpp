#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mfnet/error.hpp"
#include "mfnet/random.hpp"

namespace mfnet {

enum class DType : std::uint8_t { F32, F64 };

std::string_view dtype_name(DType dtype);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "float or double only");
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

/// Invokes `f.template operator()<T>()` with T matching the runtime dtype.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::F64) return std::forward<F>(f).template operator()<double>();
  return std::forward<F>(f).template operator()<float>();
}

/// Extents in (batch, channel, height, width) order for activations.
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Buffer {
 public:
  Buffer(DType dtype, std::size_t size);

  DType dtype() const { return dtype_; }
  std::size_t size() const;

  template <typename T>
  std::span<T> as() {
    check<T>();
    return std::get<std::vector<T>>(storage_);
  }
  template <typename T>
  std::span<const T> as() const {
    check<T>();
    return std::get<std::vector<T>>(storage_);
  }

  void fill_zero();

 private:
  template <typename T>
  void check() const {
    if (dtype_of<T>() != dtype_) throw UsageError("buffer dtype mismatch");
  }

  DType dtype_;
  std::variant<std::vector<float>, std::vector<double>> storage_;
};

class Tensor;
class Node;

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Buffer> data;
  std::unique_ptr<Buffer> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Backward rule: reads out's gradient and accumulates into captured inputs.
using BackwardFn = std::function<void(const Tensor& out)>;

/// One recorded operation on the tape.
class Node {
 public:
  Node(std::string name, std::vector<std::shared_ptr<TensorImpl>> inputs, BackwardFn fn)
      : name_(std::move(name)), inputs_(std::move(inputs)), fn_(std::move(fn)) {}

  const std::string& name() const { return name_; }
  const std::vector<std::shared_ptr<TensorImpl>>& inputs() const { return inputs_; }
  void apply(const Tensor& out) const;

 private:
  std::string name_;
  std::vector<std::shared_ptr<TensorImpl>> inputs_;
  BackwardFn fn_;
};

/// Handle to a dense array; copies alias the same storage (use clone() for a deep copy).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor from_values(Shape shape, std::span<const double> values, DType dtype = DType::F32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values, DType dtype = DType::F32);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, DType dtype = DType::F32);
  static Tensor normal(Shape shape, double mean, double stddev, Rng& rng, DType dtype = DType::F32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t ndim() const { return impl().shape.size(); }
  /// Extent of dimension `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return shape_numel(impl().shape); }
  DType dtype() const { return impl().data->dtype(); }

  template <typename T>
  std::span<T> data() {
    return impl().data->as<T>();
  }
  template <typename T>
  std::span<const T> data() const {
    return std::as_const(*impl().data).as<T>();
  }

  /// Element at a flat index, widened to double.
  double at(std::size_t flat) const;
  void set(std::size_t flat, double value);
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl().grad_fn == nullptr; }
  const std::shared_ptr<Node>& grad_fn() const { return impl().grad_fn; }

  bool has_grad() const { return impl().grad != nullptr; }
  template <typename T>
  std::span<const T> grad() const {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return std::as_const(*impl().grad).as<T>();
  }
  template <typename T>
  std::span<T> mutable_grad() {
    if (!has_grad()) throw UsageError("tensor has no gradient");
    return impl().grad->as<T>();
  }
  /// Gradient buffer, allocated as zeros on first use. Backward rules accumulate here.
  template <typename T>
  std::span<T> grad_accumulator() const {
    auto& i = const_cast<TensorImpl&>(impl());
    if (!i.grad) i.grad = std::make_unique<Buffer>(i.data->dtype(), i.data->size());
    return i.grad->as<T>();
  }
  /// Gradient copied out as a detached tensor (zeros when absent).
  Tensor grad_tensor() const;
  void zero_grad();
  void clear_grad();

  /// Same storage, no tape history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;
  /// Copies values (with conversion) from a same-shaped tensor into this storage.
  void copy_from(const Tensor& other);

  bool all_finite() const;
  bool same_storage(const Tensor& other) const { return impl().data == other.impl().data; }

  void backward() const;

  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  TensorImpl& impl();
  const TensorImpl& impl() const;

  std::shared_ptr<TensorImpl> impl_;
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

/// Attaches a backward rule to `out` when grad mode is on and any input requires grad.
/// Every op funnels its result through here, which also runs the debug finiteness check.
void record(Tensor& out, std::string_view name, std::initializer_list<Tensor> inputs, BackwardFn fn);
void record(Tensor& out, std::string_view name, const std::vector<Tensor>& inputs, BackwardFn fn);

bool grad_mode_enabled();

/// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When enabled, every op output is checked for NaN/Inf and a non-finite value throws.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();

}  // namespace mfnet
