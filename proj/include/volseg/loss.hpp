#pragma once

#include <cstdint>
#include <span>

#include "volseg/tensor.hpp"

namespace volseg {

/// 1 - mean over foreground classes c >= 1 of
/// (2 * sum(p_c * t_c) + s) / (sum(p_c) + sum(t_c) + s), with p = softmax over
/// the class axis of logits [N, C, ...] and t the one-hot of `labels`. Sums run
/// over the whole batch. For C = 2 the softmax equals a sigmoid of the logit
/// difference.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels, double smoothing = 1.0);

/// Mean over voxels of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

}  // namespace volseg
