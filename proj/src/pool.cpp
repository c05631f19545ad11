#include <algorithm>
#include <string>

#include "volseg/ops.hpp"
#include "volseg/runtime.hpp"

namespace volseg {

template <typename T>
PoolResult<T> maxpool3d(const Tensor<T>& input, std::int64_t window, std::int64_t stride, std::int64_t padding) {
  if (input.ndim() != 5) throw ShapeError("maxpool3d: input must be 5-d N,C,D,H,W, got " + to_string(input.shape()));
  if (window < 1 || stride < 1) throw ValueError("maxpool3d: window and stride must be positive");
  if (padding < 0 || 2 * padding > window) {
    throw ValueError("maxpool3d: padding must not exceed half the window");
  }
  static const char* axis_names[] = {"D", "H", "W"};
  std::int64_t in_ext[3], out_ext[3];
  for (int a = 0; a < 3; ++a) {
    in_ext[a] = input.dim(2 + a);
    const auto span = in_ext[a] + 2 * padding - window;
    if (span < 0 || span % stride != 0) {
      throw ShapeError(std::string("maxpool3d: axis ") + std::to_string(2 + a) + " (" + axis_names[a] +
                       ") extent " + std::to_string(in_ext[a]) + " is not divisible by stride " +
                       std::to_string(stride) + "; pad or crop upstream");
    }
    out_ext[a] = span / stride + 1;
  }
  const auto planes = input.dim(0) * input.dim(1);
  const auto out_vol = out_ext[0] * out_ext[1] * out_ext[2];

  // Separable: max along W, then H, then D. Each pass keeps the first maximum,
  // so ties resolve to the lowest (d, h, w) in raster order.
  const T* x = input.data().data();
  const auto [D, H, W] = in_ext;
  const auto [OD, OH, OW] = out_ext;
  auto pass = [&](std::int64_t rows, std::int64_t extent, std::int64_t out_extent, std::int64_t inner,
                  const T* val, const std::int64_t* idx, T* out_val, std::int64_t* out_idx) {
    // rows x extent x inner  ->  rows x out_extent x inner, reducing the middle axis.
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t o = 0; o < out_extent; ++o) {
        const std::int64_t lo = std::max<std::int64_t>(0, o * stride - padding);
        const std::int64_t hi = std::min(extent, o * stride - padding + window);
        if (inner == 1 && !idx) {
          const T* row = val + r * extent;
          std::int64_t at = lo;
          for (std::int64_t e = lo + 1; e < hi; ++e) at = row[e] > row[at] ? e : at;
          out_val[r * out_extent + o] = row[at];
          out_idx[r * out_extent + o] = r * extent + at;
          continue;
        }
        T* dv = out_val + (r * out_extent + o) * inner;
        std::int64_t* di = out_idx + (r * out_extent + o) * inner;
        const T* sv = val + (r * extent + lo) * inner;
        std::copy(sv, sv + inner, dv);
        if (idx) {
          std::copy(idx + (r * extent + lo) * inner, idx + (r * extent + lo + 1) * inner, di);
        } else {
          for (std::int64_t j = 0; j < inner; ++j) di[j] = (r * extent + lo) * inner + j;
        }
        for (std::int64_t e = lo + 1; e < hi; ++e) {
          const T* ev = val + (r * extent + e) * inner;
          for (std::int64_t j = 0; j < inner; ++j) {
            if (ev[j] > dv[j]) {
              dv[j] = ev[j];
              di[j] = idx ? idx[(r * extent + e) * inner + j] : (r * extent + e) * inner + j;
            }
          }
        }
      }
    }
  };
  std::vector<T> vw(static_cast<std::size_t>(planes * D * H * OW)), vh(static_cast<std::size_t>(planes * D * OH * OW));
  std::vector<std::int64_t> iw(vw.size()), ih(vh.size());
  std::vector<T> out(static_cast<std::size_t>(planes * out_vol));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  pass(planes * D * H, W, OW, 1, x, nullptr, vw.data(), iw.data());
  pass(planes * D, H, OH, OW, vw.data(), iw.data(), vh.data(), ih.data());
  pass(planes, D, OD, OH * OW, vh.data(), ih.data(), out.data(), argmax->data());
  add_work(static_cast<std::uint64_t>(planes * out_vol * window * window * window));

  Shape shape{input.dim(0), input.dim(1), out_ext[0], out_ext[1], out_ext[2]};
  std::shared_ptr<const std::vector<std::int64_t>> indices = argmax;
  auto output = detail::record<T>(std::move(shape), std::move(out), "maxpool3d", {input},
                                  [input, indices](std::span<const T> grad) {
                                    auto gx = detail::grad_sink(input);
                                    const auto& idx = *indices;
                                    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += grad[i];
                                  });
  return {std::move(output), std::move(indices)};
}

template PoolResult<float> maxpool3d(const Tensor<float>&, std::int64_t, std::int64_t, std::int64_t);
template PoolResult<double> maxpool3d(const Tensor<double>&, std::int64_t, std::int64_t, std::int64_t);

}  // namespace volseg
