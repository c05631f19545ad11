#include "kernels.hpp"

#include <algorithm>

#include <Eigen/Core>

#include "volseg/runtime.hpp"

namespace volseg::kernels {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  add_work(static_cast<std::uint64_t>(m * n * k));
  Eigen::Map<const Mat, 0, Stride> A(a, trans_a ? k : m, trans_a ? m : k, Stride(lda));
  Eigen::Map<const Mat, 0, Stride> B(b, trans_b ? n : k, trans_b ? k : n, Stride(ldb));
  Eigen::Map<Mat, 0, Stride> C(c, m, n, Stride(ldc));
  if (beta == T(0)) {
    C.setZero();
  } else if (beta != T(1)) {
    C *= beta;
  }
  if (trans_a && trans_b) {
    C.noalias() += alpha * A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += alpha * A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += alpha * A * B.transpose();
  } else {
    C.noalias() += alpha * A * B;
  }
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, float, const float*, std::int64_t,
                          const float*, std::int64_t, float, float*, std::int64_t);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, double, const double*,
                           std::int64_t, const double*, std::int64_t, double, double*, std::int64_t);

std::int64_t column_tile(std::int64_t rows, std::int64_t columns, std::int64_t row_length) {
  constexpr std::int64_t kBudget = 128 * 1024;  // elements
  std::int64_t tile = std::max<std::int64_t>(512, kBudget / std::max<std::int64_t>(rows, 1));
  tile = std::max<std::int64_t>(row_length, tile / row_length * row_length);
  return std::min(tile, columns);
}

namespace {

// Range [lo, hi) of strided indices o with o * stride - pad + tap in [0, extent).
struct ValidRange {
  std::int64_t lo;
  std::int64_t hi;
};

ValidRange valid_range(std::int64_t extent, std::int64_t tap, std::int64_t stride, std::int64_t pad) {
  const std::int64_t num_lo = pad - tap;
  const std::int64_t lo = num_lo <= 0 ? 0 : (num_lo + stride - 1) / stride;
  const std::int64_t num_hi = extent - 1 + pad - tap;
  const std::int64_t hi = num_hi < 0 ? 0 : num_hi / stride + 1;
  return {lo, std::max(lo, hi)};
}

// Visits the strided output rows [r_first, r_last) grouped into runs that stay
// within one depth slice: fn(offset_row, od, oh_begin, oh_end).
template <typename Fn>
void for_each_run(const ConvGeometry& g, std::int64_t r_first, std::int64_t r_last, Fn&& fn) {
  const auto OH = g.strided[1];
  std::int64_t r = r_first;
  while (r < r_last) {
    const std::int64_t od = r / OH;
    const std::int64_t oh0 = r % OH;
    const std::int64_t oh1 = std::min(OH, oh0 + (r_last - r));
    fn(r - r_first, od, oh0, oh1);
    r += oh1 - oh0;
  }
}

}  // namespace

template <typename T>
void im2col(const T* image, std::int64_t channels, const ConvGeometry& g, std::int64_t first, std::int64_t last,
            T* cols) {
  const auto [D, H, W] = g.dense;
  const auto OW = g.strided[2];
  const std::int64_t k = g.kernel, s = g.stride, p = g.pad;
  const std::int64_t width = last - first;
  const std::int64_t r_first = first / OW, r_last = last / OW;
  // Stride-1 rows with equal dense/strided widths are contiguous shifted copies
  // of the source plane, apart from the wrapped columns at the borders.
  const bool shifted_planes = s == 1 && W == OW;
  T* dst = cols;
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* src_c = image + c * D * H * W;
    for (std::int64_t kd = 0; kd < k; ++kd) {
      for (std::int64_t kh = 0; kh < k; ++kh) {
        const auto rh = valid_range(H, kh, s, p);
        for (std::int64_t kw = 0; kw < k; ++kw, dst += width) {
          const auto rw = valid_range(W, kw, s, p);
          for_each_run(g, r_first, r_last, [&](std::int64_t row, std::int64_t od, std::int64_t oh0, std::int64_t oh1) {
            T* out = dst + row * OW;
            const std::int64_t id = od * s - p + kd;
            if (id < 0 || id >= D) {
              std::fill(out, out + (oh1 - oh0) * OW, T(0));
              return;
            }
            const T* plane = src_c + id * H * W;
            const std::int64_t a = std::clamp(rh.lo, oh0, oh1);
            const std::int64_t b = std::clamp(rh.hi, a, oh1);
            std::fill(out, out + (a - oh0) * OW, T(0));
            std::fill(out + (b - oh0) * OW, out + (oh1 - oh0) * OW, T(0));
            if (a == b) return;
            T* run = out + (a - oh0) * OW;
            if (shifted_planes) {
              const std::int64_t shift = kw - p;
              const std::int64_t count = (b - a) * W;
              const std::int64_t skip_lo = std::max<std::int64_t>(0, -shift);
              const std::int64_t skip_hi = std::max<std::int64_t>(0, shift);
              const T* src = plane + (a - p + kh) * W;
              if (count > skip_lo + skip_hi) {
                std::copy(src + skip_lo + shift, src + count - skip_hi + shift, run + skip_lo);
              }
              const std::int64_t lo = std::min(rw.lo, W);
              const std::int64_t hi = std::clamp(rw.hi, lo, W);
              for (std::int64_t r = 0; r < b - a; ++r) {
                T* line = run + r * W;
                std::fill(line, line + lo, T(0));
                std::fill(line + hi, line + W, T(0));
              }
              return;
            }
            for (std::int64_t oh = a; oh < b; ++oh) {
              T* line = run + (oh - a) * OW;
              const T* src = plane + (oh * s - p + kh) * W;
              const std::int64_t lo = std::min(rw.lo, OW);
              const std::int64_t hi = std::clamp(rw.hi, lo, OW);
              std::fill(line, line + lo, T(0));
              for (std::int64_t ow = lo; ow < hi; ++ow) line[ow] = src[ow * s - p + kw];
              std::fill(line + hi, line + OW, T(0));
            }
          });
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::int64_t channels, const ConvGeometry& g, std::int64_t first, std::int64_t last,
                T* image) {
  const auto [D, H, W] = g.dense;
  const auto OW = g.strided[2];
  const std::int64_t k = g.kernel, s = g.stride, p = g.pad;
  const std::int64_t width = last - first;
  const std::int64_t r_first = first / OW, r_last = last / OW;
  const T* src = cols;
  for (std::int64_t c = 0; c < channels; ++c) {
    T* dst_c = image + c * D * H * W;
    for (std::int64_t kd = 0; kd < k; ++kd) {
      for (std::int64_t kh = 0; kh < k; ++kh) {
        const auto rh = valid_range(H, kh, s, p);
        for (std::int64_t kw = 0; kw < k; ++kw, src += width) {
          const auto rw = valid_range(W, kw, s, p);
          const std::int64_t lo = std::min(rw.lo, OW);
          const std::int64_t hi = std::clamp(rw.hi, lo, OW);
          for_each_run(g, r_first, r_last, [&](std::int64_t row, std::int64_t od, std::int64_t oh0, std::int64_t oh1) {
            const std::int64_t id = od * s - p + kd;
            if (id < 0 || id >= D) return;
            T* plane = dst_c + id * H * W;
            const std::int64_t a = std::clamp(rh.lo, oh0, oh1);
            const std::int64_t b = std::clamp(rh.hi, a, oh1);
            for (std::int64_t oh = a; oh < b; ++oh) {
              const T* line = src + (row + oh - oh0) * OW;
              T* dst = plane + (oh * s - p + kh) * W + (lo * s - p + kw);
              if (s == 1) {
                for (std::int64_t i = 0; i < hi - lo; ++i) dst[i] += line[lo + i];
              } else {
                for (std::int64_t i = 0; i < hi - lo; ++i) dst[i * s] += line[lo + i];
              }
            }
          });
        }
      }
    }
  }
}

template void im2col<float>(const float*, std::int64_t, const ConvGeometry&, std::int64_t, std::int64_t, float*);
template void im2col<double>(const double*, std::int64_t, const ConvGeometry&, std::int64_t, std::int64_t,
                             double*);
template void col2im_add<float>(const float*, std::int64_t, const ConvGeometry&, std::int64_t, std::int64_t,
                                float*);
template void col2im_add<double>(const double*, std::int64_t, const ConvGeometry&, std::int64_t, std::int64_t,
                                 double*);

}  // namespace volseg::kernels
