#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

enum class Mode { train, eval };

struct Padding {
  bool same = true;
  std::int64_t value = 0;

  static Padding Same() { return {true, 0}; }
  static Padding Explicit(std::int64_t v) { return {false, v}; }
};

/// Kernel and bias of a cubic 3D convolution.
///
/// conv3d reads `weight` as Cout x Cin x k x k x k. transposed_conv3d reads it
/// as Cin x Cout x k x k x k, i.e. the layout of the convolution it is the
/// adjoint of. `bias` always has one entry per output channel.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  std::int64_t stride = 1;
  Padding padding = Padding::Same();
};

// 5-d activations are N x C x D x H x W, row-major.

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const ConvParams<T>& params);

/// Strided upsampling convolution. Output extent per axis is
/// (in - 1) * stride - 2 * padding + k; `same` padding is rejected.
template <typename T>
Tensor<T> transposed_conv3d(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  // Flat input offset of the winning voxel for each output element.
  std::shared_ptr<const std::vector<std::int64_t>> argmax;
};

/// Max pooling with a cubic window. Padded positions never win; ties go to
/// the first voxel in row-major window order. Each axis must satisfy
/// (extent + 2 * padding - window) % stride == 0.
template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& input, std::int64_t window, std::int64_t stride,
                        std::int64_t padding = 0);

template <typename T>
struct BatchNormState {
  explicit BatchNormState(std::int64_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}

  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization over N x D x H x W. Train mode uses batch
/// statistics and folds them into `state` (unbiased variance); eval mode reads
/// `state` only.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Concatenates along axis 1; all other extents must agree.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

/// x[N,C,...] * gates[N,C] broadcast over the trailing axes.
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gates);

/// Mean over every axis past the channel axis: [N,C,...] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// x[N,F] * weights[F,G] + bias[G].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);

/// Nearest-neighbour upsampling of the three spatial axes by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

}  // namespace volseg
