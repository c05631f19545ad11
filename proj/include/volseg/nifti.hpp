#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "volseg/tensor.hpp"

namespace volseg {

// Single-file NIfTI-1 ("n+1"), little-endian, no compression, no orientation.
enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

/// Voxel data in row-major [C][D][H][W] (or [D][H][W]); W is NIfTI dim[1],
/// H dim[2], D dim[3], C dim[4].
struct NiftiImage {
  Shape shape;
  NiftiDatatype datatype = NiftiDatatype::float32;
  std::vector<float> data;  // already scaled by scl_slope / scl_inter
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // D, H, W in mm
};

/// Errors: IoError (unreadable), FormatError with reason bad_magic,
/// unsupported_format, unsupported_datatype, truncated or bad_header.
NiftiImage read_nifti(const std::filesystem::path& path);

/// Writes vox_offset 352, magic "n+1". Values must be representable in the
/// datatype (integers in range for uint8/int16).
void write_nifti(const NiftiImage& image, const std::filesystem::path& path);

}  // namespace volseg
