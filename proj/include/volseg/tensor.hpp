#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "volseg/error.hpp"

namespace volseg {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

// One recorded operation in the lineage graph. The closure receives the
// gradient of the operation's output and accumulates into its inputs.
template <typename T>
struct GradNode {
  const char* op = "";
  std::vector<Tensor<T>> inputs;
  std::function<void(std::span<const T>)> backward;
  bool consumed = false;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> node;
};

/// Dense N-d array in row-major order with optional reverse-mode lineage.
///
/// A Tensor is a shared handle: copies refer to the same buffer. Operations
/// never modify their operands; only leaf parameters are updated in place by
/// optimizers through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->node == nullptr; }
  const char* producer() const { return impl_->node ? impl_->node->op : ""; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Reverse-mode sweep from this scalar. Populates grad on every reachable
  /// tensor that requires it; the traversed graph cannot be swept twice.
  void backward() const;

  /// Same values, no lineage, no grad requirement. Copies the buffer.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& source);

// Gradient recording is on by default; NoGradGuard disables it for a scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs);

// Returns the grad buffer of `t` (allocated on demand), or an empty span when
// `t` does not take part in differentiation.
template <typename T>
std::span<T> grad_sink(const Tensor<T>& t);

// Wraps freshly computed output data into a tensor and, when any input
// requires grad, attaches the backward closure.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, const char* op,
                 std::vector<Tensor<T>> inputs,
                 std::function<void(std::span<const T>)> backward);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace volseg
