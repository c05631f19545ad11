#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

using Extents = std::array<std::int64_t, 3>;  // D, H, W

/// Multi-modality intensity volume [C, D, H, W] with a label per voxel.
struct VolumeSample {
  std::string id;
  Tensor<float> image;
  std::vector<std::uint8_t> label;  // D * H * W, row-major
  std::array<double, 3> voxel_spacing{1.0, 1.0, 1.0};

  Extents extents() const { return {image.dim(1), image.dim(2), image.dim(3)}; }
  std::int64_t channels() const { return image.dim(0); }
};

/// Checks the image/label shape contract and label range.
void check_sample(const VolumeSample& sample, std::int64_t num_classes);

struct Lesion {
  std::array<double, 3> center;  // voxel coordinates
  std::array<double, 3> radii;   // semi-axes in voxels
  std::uint8_t label = 1;
};

struct PhantomSpec {
  Extents extents{32, 32, 32};
  std::int64_t num_modalities = 4;
  std::int64_t num_classes = 2;
  std::pair<std::int64_t, std::int64_t> tumor_count{1, 3};
  std::pair<double, double> radius{2.0, 5.0};
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  // Replaces the random lesions when set.
  std::optional<std::vector<Lesion>> lesions;
};

/// Ellipsoidal brain with zero background, per-modality tissue intensity,
/// ellipsoidal lesions with modality-dependent contrast, Gaussian noise inside
/// the brain. A voxel is inside a lesion when sum(((x - c) / r)^2) <= 1.
VolumeSample generate_phantom(const PhantomSpec& spec, const std::string& id = "phantom");

/// Seed of the i-th sample of a dataset drawn from `base`.
std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index);

std::vector<VolumeSample> generate_phantom_set(const PhantomSpec& spec, std::int64_t count,
                                               const std::string& prefix);

enum class NormMethod { zscore, minmax };

/// zscore: per channel over nonzero voxels, zeros stay zero, a constant
/// channel maps to zeros. minmax: per channel to [0, 1].
Tensor<float> normalize(const Tensor<float>& image, NormMethod method);

/// Center crop or zero pad each axis to `target`; the low side receives
/// floor(diff / 2). Labels are moved, never interpolated.
VolumeSample crop_or_pad(const VolumeSample& sample, const Extents& target);

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

/// Seeded shuffle, then round(n * val_fraction) ids go to validation.
Split split_dataset(const std::vector<std::string>& ids, double val_fraction, std::uint64_t seed);

}  // namespace volseg
