#include "volseg/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace volseg {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace {

constexpr std::int32_t kHeaderSize = 348;
constexpr std::int64_t kDataOffset = 352;

// Byte offsets within the 348-byte header.
constexpr std::size_t kDim = 40;
constexpr std::size_t kDatatype = 70;
constexpr std::size_t kBitpix = 72;
constexpr std::size_t kPixdim = 76;
constexpr std::size_t kVoxOffset = 108;
constexpr std::size_t kSclSlope = 112;
constexpr std::size_t kSclInter = 116;
constexpr std::size_t kXyztUnits = 123;
constexpr std::size_t kMagic = 344;

template <typename V>
V load(const std::vector<char>& buf, std::size_t offset) {
  V v;
  std::memcpy(&v, buf.data() + offset, sizeof(V));
  return v;
}

template <typename V>
void store(std::vector<char>& buf, std::size_t offset, V v) {
  std::memcpy(buf.data() + offset, &v, sizeof(V));
}

std::int64_t bytes_per_voxel(std::int16_t datatype) {
  switch (static_cast<NiftiDatatype>(datatype)) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::float32: return 4;
  }
  return 0;
}

}  // namespace

NiftiImage read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto where = path.string();
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) {
    throw FormatError(FormatIssue::truncated, where + " is shorter than a NIfTI-1 header");
  }
  const auto sizeof_hdr = load<std::int32_t>(bytes, 0);
  if (sizeof_hdr != kHeaderSize) {
    if (static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr))) == kHeaderSize) {
      throw FormatError(FormatIssue::unsupported_format, where + " is big-endian");
    }
    throw FormatError(FormatIssue::bad_header, where + " has sizeof_hdr " + std::to_string(sizeof_hdr));
  }
  const char* magic = bytes.data() + kMagic;
  if (std::memcmp(magic, "ni1\0", 4) == 0) {
    throw FormatError(FormatIssue::unsupported_format, where + " uses a detached header (magic \"ni1\")");
  }
  if (std::memcmp(magic, "n+1\0", 4) != 0) throw FormatError(FormatIssue::bad_magic, where + " lacks magic \"n+1\"");

  const auto datatype = load<std::int16_t>(bytes, kDatatype);
  const auto bpv = bytes_per_voxel(datatype);
  if (bpv == 0) {
    throw FormatError(FormatIssue::unsupported_datatype,
                      where + " has datatype " + std::to_string(datatype) + " (supported: 2, 4, 16)");
  }
  const auto ndim = load<std::int16_t>(bytes, kDim);
  if (ndim < 3 || ndim > 4) {
    throw FormatError(FormatIssue::bad_header, where + " has " + std::to_string(ndim) + " dimensions (supported: 3, 4)");
  }
  std::int64_t extent[5] = {1, 1, 1, 1, 1};
  for (int i = 1; i <= ndim; ++i) {
    extent[i] = load<std::int16_t>(bytes, kDim + 2 * i);
    if (extent[i] < 1) throw FormatError(FormatIssue::bad_header, where + " has a non-positive dim[" + std::to_string(i) + "]");
  }
  const auto vox_offset = static_cast<std::int64_t>(load<float>(bytes, kVoxOffset));
  if (vox_offset < kHeaderSize) throw FormatError(FormatIssue::bad_header, where + " has vox_offset inside the header");

  NiftiImage img;
  img.datatype = static_cast<NiftiDatatype>(datatype);
  img.shape = ndim == 4 ? Shape{extent[4], extent[3], extent[2], extent[1]} : Shape{extent[3], extent[2], extent[1]};
  for (int a = 0; a < 3; ++a) {
    const double s = load<float>(bytes, kPixdim + 4 * (3 - a));
    img.spacing[a] = s > 0 ? s : 1.0;
  }
  const auto count = numel(img.shape);
  if (static_cast<std::int64_t>(bytes.size()) < vox_offset + count * bpv) {
    throw FormatError(FormatIssue::truncated, where + " holds " + std::to_string(bytes.size() - vox_offset) +
                                                  " data bytes, expected " + std::to_string(count * bpv));
  }
  const char* src = bytes.data() + vox_offset;
  img.data.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    switch (img.datatype) {
      case NiftiDatatype::uint8: img.data[i] = static_cast<unsigned char>(src[i]); break;
      case NiftiDatatype::int16: {
        std::int16_t v;
        std::memcpy(&v, src + 2 * i, 2);
        img.data[i] = v;
        break;
      }
      case NiftiDatatype::float32: std::memcpy(&img.data[i], src + 4 * i, 4); break;
    }
  }
  const float slope = load<float>(bytes, kSclSlope);
  const float inter = load<float>(bytes, kSclInter);
  if (slope != 0.0f && std::isfinite(slope) && std::isfinite(inter) && !(slope == 1.0f && inter == 0.0f)) {
    for (auto& v : img.data) v = v * slope + inter;
  }
  return img;
}

void write_nifti(const NiftiImage& img, const std::filesystem::path& path) {
  const auto ndim = static_cast<std::int16_t>(img.shape.size());
  if (ndim != 3 && ndim != 4) throw ShapeError("write_nifti: shape must be D,H,W or C,D,H,W, got " + to_string(img.shape));
  if (numel(img.shape) != static_cast<std::int64_t>(img.data.size())) {
    throw ShapeError("write_nifti: " + std::to_string(img.data.size()) + " values for shape " + to_string(img.shape));
  }
  for (auto e : img.shape) {
    if (e < 1 || e > 32767) throw ShapeError("write_nifti: extents must be in 1..32767, got " + to_string(img.shape));
  }
  const auto dt = static_cast<std::int16_t>(img.datatype);
  const auto bpv = bytes_per_voxel(dt);
  if (bpv == 0) throw ValueError("write_nifti: unsupported datatype " + std::to_string(dt));

  std::vector<char> out(static_cast<std::size_t>(kDataOffset + bpv * numel(img.shape)), 0);
  store<std::int32_t>(out, 0, kHeaderSize);
  store<std::int16_t>(out, kDim, ndim);
  for (int i = 0; i < ndim; ++i) store<std::int16_t>(out, kDim + 2 * (i + 1), static_cast<std::int16_t>(img.shape[ndim - 1 - i]));
  for (int i = ndim + 1; i < 8; ++i) store<std::int16_t>(out, kDim + 2 * i, 1);
  store<std::int16_t>(out, kDatatype, dt);
  store<std::int16_t>(out, kBitpix, static_cast<std::int16_t>(8 * bpv));
  store<float>(out, kPixdim, 1.0f);
  for (int a = 0; a < 3; ++a) store<float>(out, kPixdim + 4 * (3 - a), static_cast<float>(img.spacing[a]));
  store<float>(out, kVoxOffset, static_cast<float>(kDataOffset));
  store<float>(out, kSclSlope, 0.0f);
  store<float>(out, kSclInter, 0.0f);
  out[kXyztUnits] = 2;  // millimetres
  std::memcpy(out.data() + kMagic, "n+1\0", 4);

  char* dst = out.data() + kDataOffset;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float v = img.data[i];
    switch (img.datatype) {
      case NiftiDatatype::uint8:
        if (!(v >= 0 && v <= 255 && v == std::floor(v))) throw ValueError("write_nifti: value " + std::to_string(v) + " is not a uint8");
        dst[i] = static_cast<char>(static_cast<unsigned char>(v));
        break;
      case NiftiDatatype::int16: {
        if (!(v >= -32768 && v <= 32767 && v == std::floor(v))) throw ValueError("write_nifti: value " + std::to_string(v) + " is not an int16");
        const auto s = static_cast<std::int16_t>(v);
        std::memcpy(dst + 2 * i, &s, 2);
        break;
      }
      case NiftiDatatype::float32: std::memcpy(dst + 4 * i, &v, 4); break;
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing " + path.string());
}

}  // namespace volseg
