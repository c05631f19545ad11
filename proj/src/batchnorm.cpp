#include <cmath>
#include <string>

#include "volseg/ops.hpp"
#include "volseg/runtime.hpp"

namespace volseg {

namespace {

// Sum of term(0..n) in double, eight interleaved partial sums.
template <typename F>
double lane_sum(std::int64_t n, F&& term) {
  double acc[8] = {};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += term(i + l);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += term(i);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode) {
  if (input.ndim() < 2) throw ShapeError("batchnorm3d: input needs a channel axis, got " + to_string(input.shape()));
  const auto n_batch = input.dim(0);
  const auto channels = input.dim(1);
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &state.running_mean, &state.running_var}) {
    if (t->ndim() != 1 || t->dim(0) != channels) {
      throw ShapeError("batchnorm3d: per-channel tensors must have shape [" + std::to_string(channels) + "], got " +
                       to_string(t->shape()));
    }
  }
  const auto volume = input.numel() / (n_batch * channels);
  const auto count = n_batch * volume;
  const T* x = input.data().data();

  // Per-channel statistics actually used for normalization.
  std::vector<T> mean(static_cast<std::size_t>(channels));
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  if (mode == Mode::train) {
    auto running_mean = state.running_mean.mutable_data();
    auto running_var = state.running_var.mutable_data();
    for (std::int64_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < n_batch; ++n) {
        const T* row = x + (n * channels + c) * volume;
        acc += lane_sum(volume, [row](std::int64_t i) { return static_cast<double>(row[i]); });
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t n = 0; n < n_batch; ++n) {
        const T* row = x + (n * channels + c) * volume;
        sq += lane_sum(volume, [row, mu](std::int64_t i) {
          const double d = row[i] - mu;
          return d * d;
        });
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - state.momentum) * running_mean[c] + state.momentum * mu);
      running_var[c] = static_cast<T>((1.0 - state.momentum) * running_var[c] + state.momentum * unbiased);
    }
  } else {
    auto running_mean = state.running_mean.data();
    auto running_var = state.running_var.data();
    for (std::int64_t c = 0; c < channels; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + state.eps));
    }
  }

  std::vector<T> out(static_cast<std::size_t>(input.numel()));
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
  for (std::int64_t n = 0; n < n_batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const auto offset = (n * channels + c) * volume;
      const T scale = g[c] * inv_std[c];
      const T shift = b[c] - mean[c] * scale;
      for (std::int64_t i = 0; i < volume; ++i) out[offset + i] = x[offset + i] * scale + shift;
    }
  }
  add_work(static_cast<std::uint64_t>(3 * input.numel()));

  return detail::record<T>(
      input.shape(), std::move(out), "batchnorm3d", {input, gamma, beta},
      [input, gamma, beta, mean = std::move(mean), inv_std = std::move(inv_std), mode, n_batch, channels, volume,
       count](std::span<const T> grad) {
        auto gx = detail::grad_sink(input);
        auto gg = detail::grad_sink(gamma);
        auto gb = detail::grad_sink(beta);
        const T* x = input.data().data();
        const T* g = gamma.data().data();
        for (std::int64_t c = 0; c < channels; ++c) {
          // sum(dy) and sum(dy * xhat) over the channel
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          const double m = mean[c], s = inv_std[c];
          for (std::int64_t n = 0; n < n_batch; ++n) {
            const T* xr = x + (n * channels + c) * volume;
            const T* dy = grad.data() + (n * channels + c) * volume;
            sum_dy += lane_sum(volume, [dy](std::int64_t i) { return static_cast<double>(dy[i]); });
            sum_dy_xhat += lane_sum(volume, [xr, dy, m, s](std::int64_t i) { return dy[i] * ((xr[i] - m) * s); });
          }
          if (!gg.empty()) gg[c] += static_cast<T>(sum_dy_xhat);
          if (!gb.empty()) gb[c] += static_cast<T>(sum_dy);
          if (gx.empty()) continue;
          const double k = static_cast<double>(g[c]) * inv_std[c];
          const double mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
          for (std::int64_t n = 0; n < n_batch; ++n) {
            const auto offset = (n * channels + c) * volume;
            T* gxr = gx.data() + offset;
            const T* xr = x + offset;
            const T* dy = grad.data() + offset;
            if (mode == Mode::train) {
              for (std::int64_t i = 0; i < volume; ++i) {
                const double xhat = (xr[i] - m) * s;
                gxr[i] += static_cast<T>(k * (dy[i] - mean_dy - xhat * mean_dy_xhat));
              }
            } else {
              for (std::int64_t i = 0; i < volume; ++i) gxr[i] += static_cast<T>(k * dy[i]);
            }
          }
        }
      });
}

template Tensor<float> batchnorm3d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                   BatchNormState<float>&, Mode);
template Tensor<double> batchnorm3d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                    BatchNormState<double>&, Mode);

}  // namespace volseg
