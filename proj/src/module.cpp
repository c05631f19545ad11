#include "volseg/module.hpp"

namespace volseg {

std::uint64_t fnv1a(const std::string& text, std::uint64_t hash) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

template <typename T>
NamedTensors<T> Module<T>::named_parameters() const {
  NamedTensors<T> out;
  collect("", false, out);
  return out;
}

template <typename T>
NamedTensors<T> Module<T>::named_buffers() const {
  NamedTensors<T> out;
  collect("", true, out);
  return out;
}

template <typename T>
void Module<T>::collect(const std::string& prefix, bool buffers, NamedTensors<T>& out) const {
  for (const auto& [name, t] : buffers ? buffers_ : params_) out.emplace_back(prefix + name, t);
  for (const auto& [name, c] : children_) c->collect(prefix + name + ".", buffers, out);
}

template <typename T>
std::int64_t Module<T>::param_count() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.numel();
  return total;
}

template <typename T>
Module<T>* Module<T>::child(const std::string& name) const {
  for (const auto& [n, c] : children_) {
    if (n == name) return c.get();
  }
  return nullptr;
}

template <typename T>
void Module<T>::visit(const std::function<void(const std::string&, const Module&)>& fn,
                      const std::string& path) const {
  fn(path, *this);
  for (const auto& [name, c] : children_) c->visit(fn, path.empty() ? name : path + "." + name);
}

template <typename T>
void Module<T>::visit_mut(const std::function<void(const std::string&, Module&)>& fn, const std::string& path) {
  fn(path, *this);
  for (auto& [name, c] : children_) c->visit_mut(fn, path.empty() ? name : path + "." + name);
}

template <typename T>
std::int64_t Module<T>::count_kind(const std::string& kind) const {
  std::int64_t n = 0;
  visit([&](const std::string&, const Module& m) { n += m.kind() == kind; });
  return n;
}

template <typename T>
void Module<T>::register_parameter(std::string name, Tensor<T> tensor) {
  tensor.set_requires_grad(true);
  params_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
void Module<T>::register_buffer(std::string name, Tensor<T> tensor) {
  buffers_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
void initialize_parameters(Module<T>& root, std::uint64_t seed) {
  root.visit_mut([seed](const std::string& path, Module<T>& m) { m.initialize(seed ^ fnv1a(path)); });
}

template class Module<float>;
template class Module<double>;
template void initialize_parameters(Module<float>&, std::uint64_t);
template void initialize_parameters(Module<double>&, std::uint64_t);

}  // namespace volseg
