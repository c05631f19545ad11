#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "volseg/ops.hpp"
#include "volseg/tensor.hpp"

namespace volseg {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// A node in a network: owns parameter tensors, non-trainable buffers and
/// child modules. Names are path-qualified with '.' when collected.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual std::string kind() const = 0;
  virtual std::int64_t out_channels() const { return 0; }

  // Draws fresh values for this module's own parameters.
  virtual void initialize(std::uint64_t seed) { (void)seed; }

  NamedTensors<T> named_parameters() const;
  NamedTensors<T> named_buffers() const;  // batchnorm running statistics
  std::int64_t param_count() const;

  const std::vector<std::pair<std::string, std::unique_ptr<Module>>>& children() const { return children_; }
  Module* child(const std::string& name) const;

  // Pre-order walk with path-qualified names; the root has an empty path.
  void visit(const std::function<void(const std::string&, const Module&)>& fn, const std::string& path = "") const;
  void visit_mut(const std::function<void(const std::string&, Module&)>& fn, const std::string& path = "");

  // Number of descendant modules (self included) whose kind() equals `kind`.
  std::int64_t count_kind(const std::string& kind) const;

 protected:
  // Registers a shared handle; the caller may keep its own copy.
  void register_parameter(std::string name, Tensor<T> tensor);
  void register_buffer(std::string name, Tensor<T> tensor);

  template <typename M>
  M& register_child(std::string name, std::unique_ptr<M> child) {
    M& ref = *child;
    children_.emplace_back(std::move(name), std::move(child));
    return ref;
  }

 private:
  void collect(const std::string& prefix, bool buffers, NamedTensors<T>& out) const;

  NamedTensors<T> params_;
  NamedTensors<T> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

/// Seeds every module's parameters from `seed` and its path, so a parameter's
/// initial value depends only on (seed, name).
template <typename T>
void initialize_parameters(Module<T>& root, std::uint64_t seed);

std::uint64_t fnv1a(const std::string& text, std::uint64_t hash = 0xcbf29ce484222325ULL);

extern template class Module<float>;
extern template class Module<double>;
extern template void initialize_parameters(Module<float>&, std::uint64_t);
extern template void initialize_parameters(Module<double>&, std::uint64_t);

}  // namespace volseg
