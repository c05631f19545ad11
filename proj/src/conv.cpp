#include <algorithm>
#include <string>

#include "kernels.hpp"
#include "volseg/ops.hpp"
#include "volseg/runtime.hpp"

namespace volseg {

namespace {

const char* kAxisNames[] = {"N", "C", "D", "H", "W"};

template <typename T>
void require_5d(const Tensor<T>& t, const char* op, const char* what) {
  if (t.ndim() != 5) {
    throw ShapeError(std::string(op) + ": " + what + " must be 5-d N,C,D,H,W, got " + to_string(t.shape()));
  }
}

// Validates a cubic kernel tensor and returns its extent.
template <typename T>
std::int64_t cubic_kernel(const Tensor<T>& weight, const char* op) {
  require_5d(weight, op, "weight");
  const auto k = weight.dim(2);
  if (weight.dim(3) != k || weight.dim(4) != k) {
    throw ShapeError(std::string(op) + ": kernel must be cubic, got " + to_string(weight.shape()));
  }
  return k;
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::int64_t channels, const char* op) {
  if (bias.ndim() != 1 || bias.dim(0) != channels) {
    throw ShapeError(std::string(op) + ": bias must have shape [" + std::to_string(channels) + "], got " +
                     to_string(bias.shape()));
  }
}

template <typename T>
void add_bias(T* out, const T* bias, std::int64_t channels, std::int64_t volume) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T b = bias[c];
    T* row = out + c * volume;
    for (std::int64_t i = 0; i < volume; ++i) row[i] += b;
  }
  add_work(static_cast<std::uint64_t>(channels * volume));
}

template <typename T>
void accumulate_bias_grad(T* grad_bias, const T* grad_out, std::int64_t channels, std::int64_t volume) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* row = grad_out + c * volume;
    T acc = 0;
    for (std::int64_t i = 0; i < volume; ++i) acc += row[i];
    grad_bias[c] += acc;
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const ConvParams<T>& params) {
  constexpr const char* op = "conv3d";
  require_5d(input, op, "input");
  const auto k = cubic_kernel(params.weight, op);
  const auto c_out = params.weight.dim(0);
  const auto c_in = params.weight.dim(1);
  if (input.dim(1) != c_in) {
    throw ShapeError("conv3d: axis 1 (C) of input is " + std::to_string(input.dim(1)) + " but weights expect " +
                     std::to_string(c_in));
  }
  check_bias(params.bias, c_out, op);
  if (params.stride < 1) throw ValueError("conv3d: stride must be positive");
  std::int64_t pad = params.padding.value;
  if (params.padding.same) {
    if (k % 2 == 0) throw ValueError("conv3d: same padding needs an odd kernel, got " + std::to_string(k));
    pad = (k - 1) / 2;
  }
  if (pad < 0) throw ValueError("conv3d: negative padding");

  kernels::ConvGeometry g;
  g.kernel = k;
  g.stride = params.stride;
  g.pad = pad;
  for (int a = 0; a < 3; ++a) {
    const auto extent = input.dim(2 + a);
    if (extent + 2 * pad < k) {
      throw ShapeError(std::string("conv3d: axis ") + std::to_string(2 + a) + " (" + kAxisNames[2 + a] +
                       ") extent " + std::to_string(extent) + " is smaller than the kernel");
    }
    g.dense[a] = extent;
    g.strided[a] = (extent + 2 * pad - k) / params.stride + 1;
  }

  const auto n_batch = input.dim(0);
  const auto taps = c_in * g.taps();
  const auto vol_in = g.dense_volume();
  const auto vol_out = g.strided_volume();
  const bool pointwise = g.is_pointwise();

  const auto tile = kernels::column_tile(taps, vol_out, g.strided[2]);
  std::vector<T> out(static_cast<std::size_t>(n_batch * c_out * vol_out));
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(taps * tile));
  const T* x = input.data().data();
  const T* w = params.weight.data().data();
  for (std::int64_t n = 0; n < n_batch; ++n) {
    const T* xn = x + n * c_in * vol_in;
    T* yn = out.data() + n * c_out * vol_out;
    if (pointwise) {
      kernels::gemm<T>(false, false, c_out, vol_out, taps, T(1), w, taps, xn, vol_out, T(0), yn, vol_out);
    } else {
      for (std::int64_t p0 = 0; p0 < vol_out; p0 += tile) {
        const auto width = std::min(tile, vol_out - p0);
        kernels::im2col(xn, c_in, g, p0, p0 + width, cols.data());
        kernels::gemm<T>(false, false, c_out, width, taps, T(1), w, taps, cols.data(), width, T(0), yn + p0, vol_out);
      }
    }
    add_bias(yn, params.bias.data().data(), c_out, vol_out);
  }

  Shape shape{n_batch, c_out, g.strided[0], g.strided[1], g.strided[2]};
  auto weight = params.weight;
  auto bias = params.bias;
  return detail::record<T>(
      std::move(shape), std::move(out), op, {input, weight, bias},
      [input, weight, bias, g, n_batch, c_in, c_out, taps, vol_in, vol_out, pointwise, tile](std::span<const T> grad) {
        auto gx = detail::grad_sink(input);
        auto gw = detail::grad_sink(weight);
        auto gb = detail::grad_sink(bias);
        const T* x = input.data().data();
        const T* w = weight.data().data();
        // A stride-1 same-padded conv has a gather-form input gradient: the
        // output gradient convolved with the flipped, channel-swapped kernel.
        const bool flipped = !pointwise && g.stride == 1 && g.dense == g.strided;
        const auto k3 = g.taps();
        const auto taps_out = c_out * k3;
        std::vector<T> w_flip;
        if (flipped && !gx.empty()) {
          w_flip.resize(static_cast<std::size_t>(c_in * taps_out));
          for (std::int64_t co = 0; co < c_out; ++co) {
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
              for (std::int64_t t = 0; t < k3; ++t) {
                w_flip[ci * taps_out + co * k3 + (k3 - 1 - t)] = w[(co * c_in + ci) * k3 + t];
              }
            }
          }
        }
        const auto tile_out = flipped ? kernels::column_tile(taps_out, vol_in, g.dense[2]) : tile;
        std::vector<T> cols(pointwise || gw.empty() ? 0 : static_cast<std::size_t>(taps * tile));
        std::vector<T> dcols(pointwise || gx.empty() ? 0
                                                     : static_cast<std::size_t>(flipped ? taps_out * tile_out
                                                                                        : taps * tile));
        for (std::int64_t n = 0; n < n_batch; ++n) {
          const T* gy = grad.data() + n * c_out * vol_out;
          const T* xn = x + n * c_in * vol_in;
          T* gxn = gx.empty() ? nullptr : gx.data() + n * c_in * vol_in;
          if (!gb.empty()) accumulate_bias_grad(gb.data(), gy, c_out, vol_out);
          if (pointwise) {
            if (!gw.empty()) {
              kernels::gemm<T>(false, true, c_out, taps, vol_out, T(1), gy, vol_out, xn, vol_out, T(1), gw.data(), taps);
            }
            if (gxn) kernels::gemm<T>(true, false, taps, vol_out, c_out, T(1), w, taps, gy, vol_out, T(1), gxn, vol_out);
            continue;
          }
          if (!gw.empty()) {
            for (std::int64_t p0 = 0; p0 < vol_out; p0 += tile) {
              const auto width = std::min(tile, vol_out - p0);
              kernels::im2col(xn, c_in, g, p0, p0 + width, cols.data());
              kernels::gemm<T>(false, true, c_out, taps, width, T(1), gy + p0, vol_out, cols.data(), width, T(1),
                               gw.data(), taps);
            }
          }
          if (!gxn) continue;
          if (flipped) {
            for (std::int64_t p0 = 0; p0 < vol_in; p0 += tile_out) {
              const auto width = std::min(tile_out, vol_in - p0);
              kernels::im2col(gy, c_out, g, p0, p0 + width, dcols.data());
              kernels::gemm<T>(false, false, c_in, width, taps_out, T(1), w_flip.data(), taps_out, dcols.data(), width,
                               T(1), gxn + p0, vol_in);
            }
            continue;
          }
          for (std::int64_t p0 = 0; p0 < vol_out; p0 += tile) {
            const auto width = std::min(tile, vol_out - p0);
            kernels::gemm<T>(true, false, taps, width, c_out, T(1), w, taps, gy + p0, vol_out, T(0), dcols.data(),
                             width);
            kernels::col2im_add(dcols.data(), c_in, g, p0, p0 + width, gxn);
          }
        }
      });
}

template <typename T>
Tensor<T> transposed_conv3d(const Tensor<T>& input, const ConvParams<T>& params) {
  constexpr const char* op = "transposed_conv3d";
  require_5d(input, op, "input");
  const auto k = cubic_kernel(params.weight, op);
  const auto c_in = params.weight.dim(0);
  const auto c_out = params.weight.dim(1);
  if (input.dim(1) != c_in) {
    throw ShapeError("transposed_conv3d: axis 1 (C) of input is " + std::to_string(input.dim(1)) +
                     " but weights expect " + std::to_string(c_in));
  }
  check_bias(params.bias, c_out, op);
  if (params.padding.same) throw ValueError("transposed_conv3d: padding must be explicit");
  if (params.stride < 1) throw ValueError("transposed_conv3d: stride must be positive");
  const auto pad = params.padding.value;

  kernels::ConvGeometry g;
  g.kernel = k;
  g.stride = params.stride;
  g.pad = pad;
  for (int a = 0; a < 3; ++a) {
    const auto extent = input.dim(2 + a);
    const auto out_extent = (extent - 1) * params.stride - 2 * pad + k;
    if (out_extent < 1) {
      throw ShapeError(std::string("transposed_conv3d: axis ") + std::to_string(2 + a) + " (" +
                       kAxisNames[2 + a] + ") collapses to a non-positive extent");
    }
    g.strided[a] = extent;
    g.dense[a] = out_extent;
  }

  const auto n_batch = input.dim(0);
  const auto taps = c_out * g.taps();
  const auto vol_in = g.strided_volume();
  const auto vol_out = g.dense_volume();

  const auto tile = kernels::column_tile(taps, vol_in, g.strided[2]);
  std::vector<T> out(static_cast<std::size_t>(n_batch * c_out * vol_out), T(0));
  std::vector<T> cols(static_cast<std::size_t>(taps * tile));
  const T* x = input.data().data();
  const T* w = params.weight.data().data();
  for (std::int64_t n = 0; n < n_batch; ++n) {
    const T* xn = x + n * c_in * vol_in;
    T* yn = out.data() + n * c_out * vol_out;
    for (std::int64_t p0 = 0; p0 < vol_in; p0 += tile) {
      const auto width = std::min(tile, vol_in - p0);
      kernels::gemm<T>(true, false, taps, width, c_in, T(1), w, taps, xn + p0, vol_in, T(0), cols.data(), width);
      kernels::col2im_add(cols.data(), c_out, g, p0, p0 + width, yn);
    }
    add_bias(yn, params.bias.data().data(), c_out, vol_out);
  }

  Shape shape{n_batch, c_out, g.dense[0], g.dense[1], g.dense[2]};
  auto weight = params.weight;
  auto bias = params.bias;
  return detail::record<T>(
      std::move(shape), std::move(out), op, {input, weight, bias},
      [input, weight, bias, g, n_batch, c_in, c_out, taps, vol_in, vol_out, tile](std::span<const T> grad) {
        auto gx = detail::grad_sink(input);
        auto gw = detail::grad_sink(weight);
        auto gb = detail::grad_sink(bias);
        const T* x = input.data().data();
        const T* w = weight.data().data();
        std::vector<T> cols(gx.empty() && gw.empty() ? 0 : static_cast<std::size_t>(taps * tile));
        for (std::int64_t n = 0; n < n_batch; ++n) {
          const T* gy = grad.data() + n * c_out * vol_out;
          if (!gb.empty()) accumulate_bias_grad(gb.data(), gy, c_out, vol_out);
          if (cols.empty()) continue;
          for (std::int64_t p0 = 0; p0 < vol_in; p0 += tile) {
            const auto width = std::min(tile, vol_in - p0);
            kernels::im2col(gy, c_out, g, p0, p0 + width, cols.data());
            if (!gx.empty()) {
              kernels::gemm<T>(false, false, c_in, width, taps, T(1), w, taps, cols.data(), width, T(1),
                               gx.data() + n * c_in * vol_in + p0, vol_in);
            }
            if (!gw.empty()) {
              kernels::gemm<T>(false, true, c_in, taps, width, T(1), x + n * c_in * vol_in + p0, vol_in, cols.data(),
                               width, T(1), gw.data(), taps);
            }
          }
        }
      });
}

template Tensor<float> conv3d(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> conv3d(const Tensor<double>&, const ConvParams<double>&);
template Tensor<float> transposed_conv3d(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> transposed_conv3d(const Tensor<double>&, const ConvParams<double>&);

}  // namespace volseg
