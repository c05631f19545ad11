#pragma once

#include <cstdint>
#include <memory>

#include "volseg/module.hpp"

namespace volseg {

/// Cubic 3D convolution, `same` padding. Parameters: weight, bias.
template <typename T>
class Conv3d final : public Module<T> {
 public:
  Conv3d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride = 1);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "conv3d"; }
  std::int64_t out_channels() const override { return out_; }
  void initialize(std::uint64_t seed) override;

  std::int64_t in_channels() const { return in_; }
  std::int64_t kernel() const { return kernel_; }
  Tensor<T>& weight() { return params_.weight; }
  Tensor<T>& bias() { return params_.bias; }

 private:
  std::int64_t in_, out_, kernel_;
  ConvParams<T> params_;
};

/// Upsampling convolution with kernel = stride (exact scaling of every axis).
template <typename T>
class TransposedConv3d final : public Module<T> {
 public:
  TransposedConv3d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel = 2,
                   std::int64_t stride = 2);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "transposed_conv3d"; }
  std::int64_t out_channels() const override { return out_; }
  void initialize(std::uint64_t seed) override;

 private:
  std::int64_t in_, out_, kernel_, stride_;
  ConvParams<T> params_;
};

template <typename T>
class BatchNorm3d final : public Module<T> {
 public:
  explicit BatchNorm3d(std::int64_t channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "batchnorm3d"; }
  std::int64_t out_channels() const override { return channels_; }
  void initialize(std::uint64_t seed) override;

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  BatchNormState<T>& state() { return state_; }

 private:
  std::int64_t channels_;
  Tensor<T> gamma_, beta_;
  BatchNormState<T> state_;
};

/// Fully connected layer on [N, F]. Parameters: weight [F, G], bias [G].
template <typename T>
class Dense final : public Module<T> {
 public:
  Dense(std::int64_t in_features, std::int64_t out_features);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "dense"; }
  std::int64_t out_channels() const override { return out_; }
  void initialize(std::uint64_t seed) override;

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::int64_t in_, out_;
  Tensor<T> weight_, bias_;
};

template <typename T>
class MaxPool3d final : public Module<T> {
 public:
  MaxPool3d(std::int64_t window, std::int64_t stride, std::int64_t padding = 0)
      : window_(window), stride_(stride), padding_(padding) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) override { return maxpool3d(x, window_, stride_, padding_).output; }
  std::string kind() const override { return "maxpool3d"; }

 private:
  std::int64_t window_, stride_, padding_;
};

extern template class Conv3d<float>;
extern template class Conv3d<double>;
extern template class TransposedConv3d<float>;
extern template class TransposedConv3d<double>;
extern template class BatchNorm3d<float>;
extern template class BatchNorm3d<double>;
extern template class Dense<float>;
extern template class Dense<double>;

}  // namespace volseg
