#include "volseg/optim.hpp"

#include <cmath>

namespace volseg {

template <typename T>
Optimizer<T>::Optimizer(NamedTensors<T> params) : params_(std::move(params)) {}

template <typename T>
void Optimizer<T>::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) throw StateError("optimizer: parameter '" + name + "' has no gradient");
  }
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    update(i, p.mutable_data(), p.grad());
  }
  zero_grad();
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <typename T>
Adam<T>::Adam(NamedTensors<T> params, AdamOptions options) : Optimizer<T>(std::move(params)), options_(options) {
  for (const auto& [name, p] : this->params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    v_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
}

template <typename T>
std::vector<std::vector<T>*> Adam<T>::state_buffers() {
  std::vector<std::vector<T>*> out;
  for (auto& m : m_) out.push_back(&m);
  for (auto& v : v_) out.push_back(&v);
  return out;
}

template <typename T>
void Adam<T>::update(std::size_t index, std::span<T> value, std::span<const T> grad) {
  const auto& o = options_;
  const double t = static_cast<double>(this->steps_);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  auto& m = m_[index];
  auto& v = v_[index];
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + o.weight_decay * static_cast<double>(value[i]);
    const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    value[i] = static_cast<T>(value[i] - o.lr * (mi / c1) / (std::sqrt(vi / c2) + o.eps));
  }
}

template <typename T>
Sgd<T>::Sgd(NamedTensors<T> params, SgdOptions options) : Optimizer<T>(std::move(params)), options_(options) {
  for (const auto& [name, p] : this->params_) velocity_.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
}

template <typename T>
std::vector<std::vector<T>*> Sgd<T>::state_buffers() {
  std::vector<std::vector<T>*> out;
  for (auto& v : velocity_) out.push_back(&v);
  return out;
}

template <typename T>
void Sgd<T>::update(std::size_t index, std::span<T> value, std::span<const T> grad) {
  auto& vel = velocity_[index];
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = static_cast<double>(grad[i]) + options_.weight_decay * static_cast<double>(value[i]);
    const double u = options_.momentum * vel[i] + g;
    vel[i] = static_cast<T>(u);
    value[i] = static_cast<T>(value[i] - options_.lr * u);
  }
}

template class Optimizer<float>;
template class Optimizer<double>;
template class Adam<float>;
template class Adam<double>;
template class Sgd<float>;
template class Sgd<double>;

}  // namespace volseg
