#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

/// 2|P & T| / (|P| + |T|) over nonzero entries; 1.0 when both masks are empty.
double dice_score(std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> true_mask);

/// Fraction of positions where the labels agree exactly.
double pixel_accuracy(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

/// Argmax over the class axis of [N, C, ...]; ties go to the lower class.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits);

/// Mean over foreground classes 1..C-1 of the per-class Dice of one volume.
double f1_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::int64_t num_classes);

/// Overlap counts per foreground class, for pooling F1 across volumes.
struct OverlapCounts {
  std::vector<std::int64_t> intersection;
  std::vector<std::int64_t> predicted;
  std::vector<std::int64_t> actual;

  explicit OverlapCounts(std::int64_t num_classes = 2);
  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
  double f1() const;  // same class averaging and empty rule as f1_score
};

}  // namespace volseg
