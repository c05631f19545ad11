#include "volseg/layers.hpp"

#include <cmath>
#include <random>

namespace volseg {

namespace {

template <typename T>
void he_normal(Tensor<T>& t, double fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : t.mutable_data()) v = static_cast<T>(normal(rng));
}

template <typename T>
void fill(Tensor<T>& t, T value) {
  for (auto& v : t.mutable_data()) v = value;
}

void require_positive(std::int64_t v, const char* what) {
  if (v < 1) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
}

}  // namespace

template <typename T>
Conv3d<T>::Conv3d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride)
    : in_(in_channels), out_(out_channels), kernel_(kernel) {
  require_positive(in_channels, "conv3d in_channels");
  require_positive(out_channels, "conv3d out_channels");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv3d kernel must be odd, got " + std::to_string(kernel));
  params_.weight = Tensor<T>(Shape{out_, in_, kernel, kernel, kernel});
  params_.bias = Tensor<T>(Shape{out_});
  params_.stride = stride;
  this->register_parameter("weight", params_.weight);
  this->register_parameter("bias", params_.bias);
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x, Mode) {
  return conv3d(x, params_);
}

template <typename T>
void Conv3d<T>::initialize(std::uint64_t seed) {
  he_normal(params_.weight, static_cast<double>(in_ * kernel_ * kernel_ * kernel_), seed);
  fill(params_.bias, T(0));
}

template <typename T>
TransposedConv3d<T>::TransposedConv3d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                                      std::int64_t stride)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride) {
  require_positive(in_channels, "transposed_conv3d in_channels");
  require_positive(out_channels, "transposed_conv3d out_channels");
  require_positive(kernel, "transposed_conv3d kernel");
  require_positive(stride, "transposed_conv3d stride");
  params_.weight = Tensor<T>(Shape{in_, out_, kernel, kernel, kernel});
  params_.bias = Tensor<T>(Shape{out_});
  params_.stride = stride;
  params_.padding = Padding::Explicit(0);
  this->register_parameter("weight", params_.weight);
  this->register_parameter("bias", params_.bias);
}

template <typename T>
Tensor<T> TransposedConv3d<T>::forward(const Tensor<T>& x, Mode) {
  return transposed_conv3d(x, params_);
}

template <typename T>
void TransposedConv3d<T>::initialize(std::uint64_t seed) {
  // Each output voxel receives in * (k / stride)^3 contributions.
  const double per_axis = std::max(1.0, static_cast<double>(kernel_) / static_cast<double>(stride_));
  he_normal(params_.weight, static_cast<double>(in_) * per_axis * per_axis * per_axis, seed);
  fill(params_.bias, T(0));
}

template <typename T>
BatchNorm3d<T>::BatchNorm3d(std::int64_t channels)
    : channels_(channels), gamma_(Shape{channels}, T(1)), beta_(Shape{channels}, T(0)), state_(channels) {
  require_positive(channels, "batchnorm3d channels");
  this->register_parameter("gamma", gamma_);
  this->register_parameter("beta", beta_);
  this->register_buffer("running_mean", state_.running_mean);
  this->register_buffer("running_var", state_.running_var);
}

template <typename T>
Tensor<T> BatchNorm3d<T>::forward(const Tensor<T>& x, Mode mode) {
  return batchnorm3d(x, gamma_, beta_, state_, mode);
}

template <typename T>
void BatchNorm3d<T>::initialize(std::uint64_t) {
  fill(gamma_, T(1));
  fill(beta_, T(0));
  fill(state_.running_mean, T(0));
  fill(state_.running_var, T(1));
}

template <typename T>
Dense<T>::Dense(std::int64_t in_features, std::int64_t out_features)
    : in_(in_features), out_(out_features), weight_(Shape{in_features, out_features}), bias_(Shape{out_features}) {
  require_positive(in_features, "dense in_features");
  require_positive(out_features, "dense out_features");
  this->register_parameter("weight", weight_);
  this->register_parameter("bias", bias_);
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x, Mode) {
  return dense(x, weight_, bias_);
}

template <typename T>
void Dense<T>::initialize(std::uint64_t seed) {
  he_normal(weight_, static_cast<double>(in_), seed);
  fill(bias_, T(0));
}

template class Conv3d<float>;
template class Conv3d<double>;
template class TransposedConv3d<float>;
template class TransposedConv3d<double>;
template class BatchNorm3d<float>;
template class BatchNorm3d<double>;
template class Dense<float>;
template class Dense<double>;

}  // namespace volseg
