#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volseg/module.hpp"

namespace volseg {

/// Updates parameters in place from their grads, then clears the grads.
/// A parameter without a grad is an error: step() is only valid after a
/// backward pass that reached every parameter.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(NamedTensors<T> params);
  virtual ~Optimizer() = default;

  void step();
  void zero_grad();

  std::int64_t steps() const { return steps_; }
  const NamedTensors<T>& params() const { return params_; }

  // Moment buffers in a fixed order, for checkpointing.
  virtual std::vector<std::vector<T>*> state_buffers() = 0;
  void set_steps(std::int64_t steps) { steps_ = steps; }

 protected:
  virtual void update(std::size_t index, std::span<T> value, std::span<const T> grad) = 0;

  NamedTensors<T> params_;
  std::int64_t steps_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
class Adam final : public Optimizer<T> {
 public:
  Adam(NamedTensors<T> params, AdamOptions options = {});
  std::vector<std::vector<T>*> state_buffers() override;
  const AdamOptions& options() const { return options_; }

 protected:
  void update(std::size_t index, std::span<T> value, std::span<const T> grad) override;

 private:
  AdamOptions options_;
  std::vector<std::vector<T>> m_, v_;
};

struct SgdOptions {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

template <typename T>
class Sgd final : public Optimizer<T> {
 public:
  Sgd(NamedTensors<T> params, SgdOptions options = {});
  std::vector<std::vector<T>*> state_buffers() override;

 protected:
  void update(std::size_t index, std::span<T> value, std::span<const T> grad) override;

 private:
  SgdOptions options_;
  std::vector<std::vector<T>> velocity_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;
extern template class Adam<float>;
extern template class Adam<double>;
extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace volseg
