#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::int64_t worst_element = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::int64_t checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Gradients smaller than this are compared on an absolute scale.
  double magnitude_floor = 1e-3;
  // Upper bound on probed elements per leaf; larger leaves are subsampled
  // with the check's seed. Non-positive means probe everything.
  std::int64_t max_elements_per_leaf = 0;
};

/// Compares reverse-mode gradients of `fn` against central differences.
///
/// The scalar under test is sum(fn() * R) for a fixed seeded random R, so every
/// output element contributes. Each probed element's error is
/// |analytic - numeric| / max(|analytic|, |numeric|, magnitude_floor).
GradCheckReport grad_check(const std::function<Tensor<double>()>& fn, std::span<Tensor<double>> leaves,
                           std::uint64_t seed, const GradCheckOptions& options = {});

/// Draws standard-normal inputs of the given shapes and checks `op` on them.
GradCheckReport grad_check(const std::function<Tensor<double>(std::span<const Tensor<double>>)>& op,
                           const std::vector<Shape>& input_shapes, std::uint64_t seed,
                           const GradCheckOptions& options = {});

}  // namespace volseg
