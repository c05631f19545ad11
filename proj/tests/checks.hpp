#pragma once

// Check suites shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <string>
#include <vector>

#include "volseg/gradcheck.hpp"
#include "volseg/model.hpp"

namespace checks {

struct OracleSweep {
  int shapes = 0;
  double conv3d = 0.0;
  double maxpool3d = 0.0;
  double transposed_conv3d = 0.0;
  double global_avg_pool = 0.0;
  double dense = 0.0;
  bool argmax_match = true;
};

/// Runs each op on `shapes` random small shapes in 32-bit and records the
/// worst difference against the loop oracles, relative to the magnitude each
/// output accumulates (the oracle rerun on absolute values).
OracleSweep oracle_sweep(int shapes, std::uint64_t seed);

struct NamedReport {
  std::string name;
  volseg::GradCheckReport report;
};

/// 64-bit finite-difference checks of every differentiable op.
std::vector<NamedReport> op_gradients(std::uint64_t seed);

/// 64-bit finite-difference checks of every block kind, with and without SE.
std::vector<NamedReport> block_gradients(std::uint64_t seed);

/// Smallest valid config of each architecture, parameters subsampled.
volseg::ModelConfig tiny_config(volseg::ArchId arch);
NamedReport arch_gradient(volseg::ArchId arch, std::uint64_t seed);

}  // namespace checks
