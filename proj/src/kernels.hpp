#pragma once

// Internal building blocks shared by the convolution operators.

#include <array>
#include <cstdint>

namespace volseg::kernels {

/// C = alpha * op(A) * op(B) + beta * C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc);

// Geometry of a strided cubic-kernel convolution. `dense` holds the spatial
// extents of the convolution input (the transposed convolution's output) and
// `strided` those of the convolution output.
struct ConvGeometry {
  std::array<std::int64_t, 3> dense{};
  std::array<std::int64_t, 3> strided{};
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t pad = 0;

  std::int64_t dense_volume() const { return dense[0] * dense[1] * dense[2]; }
  std::int64_t strided_volume() const { return strided[0] * strided[1] * strided[2]; }
  std::int64_t taps() const { return kernel * kernel * kernel; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Unfolds strided positions [first, last) of `channels` dense volumes into a
// (channels * k^3) x (last - first) patch matrix. Out-of-range taps read as 0.
// first and last must be multiples of the strided row length.
template <typename T>
void im2col(const T* image, std::int64_t channels, const ConvGeometry& g, std::int64_t first, std::int64_t last,
            T* cols);

// Adjoint of im2col over the same column range; accumulates into image.
template <typename T>
void col2im_add(const T* cols, std::int64_t channels, const ConvGeometry& g, std::int64_t first, std::int64_t last,
                T* image);

// Column tile width, a multiple of row_length, that keeps a patch matrix with
// `rows` rows cache-resident.
std::int64_t column_tile(std::int64_t rows, std::int64_t columns, std::int64_t row_length);

}  // namespace volseg::kernels
