#pragma once

#include <cstdint>
#include <filesystem>

#include "volseg/model.hpp"
#include "volseg/optim.hpp"

namespace volseg {

struct CheckpointInfo {
  std::uint64_t fingerprint = 0;
  std::int64_t epoch = 0;  // completed epochs
  double best_val_f1 = 0.0;
  std::int64_t best_epoch = 0;
};

/// Binary snapshot of parameters, batchnorm statistics and optimizer state.
/// Written to a temporary file and renamed, so an interrupted write never
/// leaves a partial checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, Optimizer<float>& optimizer,
                     const CheckpointInfo& info);

/// Restores into an already-built model and optimizer of the same layout.
/// Throws StateError when the fingerprint differs from `expected_fingerprint`
/// and FormatError on layout mismatches.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, Model<float>& model, Optimizer<float>& optimizer,
                               std::uint64_t expected_fingerprint);

}  // namespace volseg
