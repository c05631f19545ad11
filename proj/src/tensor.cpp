#include "volseg/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "volseg/runtime.hpp"

namespace volseg {

const char* to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::value: return "value";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::state: return "state";
  }
  return "unknown";
}

const char* to_string(FormatIssue issue) {
  switch (issue) {
    case FormatIssue::bad_magic: return "bad_magic";
    case FormatIssue::unsupported_format: return "unsupported_format";
    case FormatIssue::unsupported_datatype: return "unsupported_datatype";
    case FormatIssue::truncated: return "truncated";
    case FormatIssue::bad_header: return "bad_header";
    case FormatIssue::bad_version: return "bad_version";
  }
  return "unknown";
}

namespace {

bool env_deterministic() {
  const char* v = std::getenv("VOLSEG_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

bool& deterministic_flag() {
  static bool flag = env_deterministic();
  return flag;
}

thread_local std::uint64_t tl_work = 0;
thread_local bool tl_grad_enabled = true;

}  // namespace

bool deterministic() { return deterministic_flag(); }

void set_deterministic(bool on) { deterministic_flag() = on; }

std::uint64_t work_counter() { return tl_work; }
void add_work(std::uint64_t macs) { tl_work += macs; }

bool grad_enabled() { return tl_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }

std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent < 1) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_shape(shape);
  impl_->data.assign(static_cast<std::size_t>(volseg::numel(shape)), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != volseg::numel(shape)) {
    throw ShapeError("buffer of " + std::to_string(data.size()) + " elements does not fill shape " +
                     to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return impl_->data.front();
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor<T>(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::backward() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(impl_->shape));
  }
  if (!impl_->node) throw StateError("backward() on a tensor without recorded lineage");

  // Iterative post-order DFS over producing tensors.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node_impl, next] = stack.back();
    const auto& inputs = node_impl->node->inputs;
    if (next < inputs.size()) {
      TensorImpl<T>* child = inputs[next++].impl().get();
      if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node_impl);
      stack.pop_back();
    }
  }
  for (auto* t : order) {
    if (t->node->consumed) {
      throw StateError("backward() through a graph that was already swept; rebuild it with a new forward pass");
    }
  }

  impl_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* t = *it;
    if (!t->grad.empty() && t->node->backward) t->node->backward(t->grad);
    t->node->consumed = true;
    t->node->backward = nullptr;
  }
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& source) {
  auto src = source.data();
  std::vector<To> out(src.begin(), src.end());
  return Tensor<To>(source.shape(), std::move(out));
}

template Tensor<double> cast<double, float>(const Tensor<float>&);
template Tensor<float> cast<float, double>(const Tensor<double>&);
template Tensor<float> cast<float, float>(const Tensor<float>&);
template Tensor<double> cast<double, double>(const Tensor<double>&);

namespace detail {

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
std::span<T> grad_sink(const Tensor<T>& t) {
  auto& impl = *t.impl();
  if (!impl.requires_grad) return {};
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
  return impl.grad;
}

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, const char* op, std::vector<Tensor<T>> inputs,
                 std::function<void(std::span<const T>)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<GradNode<T>>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

template bool needs_grad<float>(std::initializer_list<const Tensor<float>*>);
template bool needs_grad<double>(std::initializer_list<const Tensor<double>*>);
template std::span<float> grad_sink<float>(const Tensor<float>&);
template std::span<double> grad_sink<double>(const Tensor<double>&);
template Tensor<float> record<float>(Shape, std::vector<float>, const char*, std::vector<Tensor<float>>,
                                     std::function<void(std::span<const float>)>);
template Tensor<double> record<double>(Shape, std::vector<double>, const char*, std::vector<Tensor<double>>,
                                       std::function<void(std::span<const double>)>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace volseg
