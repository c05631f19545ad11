#include <cmath>
#include <string>

#include "kernels.hpp"
#include "volseg/ops.hpp"
#include "volseg/runtime.hpp"

namespace volseg {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operands differ in shape, " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  add_work(in.size());
  return detail::record<T>(x.shape(), std::move(out), "relu", {x}, [x](std::span<const T> grad) {
    auto gx = detail::grad_sink(x);
    auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > T(0)) gx[i] += grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto in = x.data();
  auto out = std::make_shared<std::vector<T>>(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) (*out)[i] = T(1) / (T(1) + std::exp(-in[i]));
  add_work(in.size());
  std::vector<T> values = *out;
  return detail::record<T>(x.shape(), std::move(values), "sigmoid", {x}, [x, out](std::span<const T> grad) {
    auto gx = detail::grad_sink(x);
    const auto& s = *out;
    for (std::size_t i = 0; i < s.size(); ++i) gx[i] += grad[i] * s[i] * (T(1) - s[i]);
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto da = a.data(), db = b.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] + db[i];
  add_work(da.size());
  return detail::record<T>(a.shape(), std::move(out), "add", {a, b}, [a, b](std::span<const T> grad) {
    for (const auto* t : {&a, &b}) {
      auto g = detail::grad_sink(*t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto da = a.data(), db = b.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = da[i] * db[i];
  add_work(da.size());
  return detail::record<T>(a.shape(), std::move(out), "mul", {a, b}, [a, b](std::span<const T> grad) {
    auto ga = detail::grad_sink(a);
    auto gb = detail::grad_sink(b);
    auto da = a.data(), db = b.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += grad[i] * db[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += grad[i] * da[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * factor;
  add_work(in.size());
  return detail::record<T>(x.shape(), std::move(out), "scale", {x}, [x, factor](std::span<const T> grad) {
    auto gx = detail::grad_sink(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad[i] * factor;
  });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ValueError("concat_channels: nothing to concatenate");
  const auto& first = parts.front().shape();
  if (first.size() < 2) throw ShapeError("concat_channels: inputs need a channel axis");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size() && s[0] == first[0];
    for (std::size_t a = 2; ok && a < s.size(); ++a) ok = s[a] == first[a];
    if (!ok) {
      throw ShapeError("concat_channels: non-channel extents differ, " + to_string(first) + " vs " + to_string(s));
    }
    channels += s[1];
  }
  const auto n_batch = first[0];
  const auto volume = numel(first) / (first[0] * first[1]);
  Shape shape = first;
  shape[1] = channels;
  std::vector<T> out(static_cast<std::size_t>(numel(shape)));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const auto block = p.dim(1) * volume;
    auto src = p.data();
    for (std::int64_t n = 0; n < n_batch; ++n) {
      std::copy(src.begin() + n * block, src.begin() + (n + 1) * block,
                out.begin() + n * channels * volume + offset);
    }
    offset += block;
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return detail::record<T>(std::move(shape), std::move(out), "concat_channels", inputs,
                           [inputs, n_batch, channels, volume](std::span<const T> grad) {
                             std::int64_t offset = 0;
                             for (const auto& p : inputs) {
                               const auto block = p.dim(1) * volume;
                               auto g = detail::grad_sink(p);
                               if (!g.empty()) {
                                 for (std::int64_t n = 0; n < n_batch; ++n) {
                                   const T* src = grad.data() + n * channels * volume + offset;
                                   T* dst = g.data() + n * block;
                                   for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                                 }
                               }
                               offset += block;
                             }
                           });
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gates) {
  if (x.ndim() < 2 || gates.ndim() != 2 || gates.dim(0) != x.dim(0) || gates.dim(1) != x.dim(1)) {
    throw ShapeError("scale_channels: gates " + to_string(gates.shape()) + " do not match leading axes of " +
                     to_string(x.shape()));
  }
  const auto planes = x.dim(0) * x.dim(1);
  const auto volume = x.numel() / planes;
  auto in = x.data();
  auto gv = gates.data();
  std::vector<T> out(in.size());
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t i = 0; i < volume; ++i) out[p * volume + i] = in[p * volume + i] * gv[p];
  }
  add_work(in.size());
  return detail::record<T>(x.shape(), std::move(out), "scale_channels", {x, gates},
                           [x, gates, planes, volume](std::span<const T> grad) {
                             auto gx = detail::grad_sink(x);
                             auto gg = detail::grad_sink(gates);
                             auto in = x.data();
                             auto gv = gates.data();
                             for (std::int64_t p = 0; p < planes; ++p) {
                               T acc = 0;
                               for (std::int64_t i = 0; i < volume; ++i) {
                                 const auto at = p * volume + i;
                                 if (!gx.empty()) gx[at] += grad[at] * gv[p];
                                 acc += grad[at] * in[at];
                               }
                               if (!gg.empty()) gg[p] += acc;
                             }
                           });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() < 3) throw ShapeError("global_avg_pool: expected N,C,spatial... got " + to_string(x.shape()));
  const auto planes = x.dim(0) * x.dim(1);
  const auto volume = x.numel() / planes;
  auto in = x.data();
  std::vector<T> out(static_cast<std::size_t>(planes));
  for (std::int64_t p = 0; p < planes; ++p) {
    double acc = 0;
    for (std::int64_t i = 0; i < volume; ++i) acc += in[p * volume + i];
    out[p] = static_cast<T>(acc / static_cast<double>(volume));
  }
  add_work(in.size());
  return detail::record<T>(Shape{x.dim(0), x.dim(1)}, std::move(out), "global_avg_pool", {x},
                           [x, planes, volume](std::span<const T> grad) {
                             auto gx = detail::grad_sink(x);
                             for (std::int64_t p = 0; p < planes; ++p) {
                               const T g = grad[p] / static_cast<T>(volume);
                               for (std::int64_t i = 0; i < volume; ++i) gx[p * volume + i] += g;
                             }
                           });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.ndim() != 2 || weights.ndim() != 2 || x.dim(1) != weights.dim(0)) {
    throw ShapeError("dense: inner extents differ, input " + to_string(x.shape()) + " vs weights " +
                     to_string(weights.shape()));
  }
  const auto rows = x.dim(0), in_f = x.dim(1), out_f = weights.dim(1);
  if (bias.ndim() != 1 || bias.dim(0) != out_f) {
    throw ShapeError("dense: bias must have shape [" + std::to_string(out_f) + "], got " + to_string(bias.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(rows * out_f));
  for (std::int64_t r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_f);
  kernels::gemm<T>(false, false, rows, out_f, in_f, T(1), x.data().data(), in_f, weights.data().data(), out_f, T(1),
                   out.data(), out_f);
  return detail::record<T>(Shape{rows, out_f}, std::move(out), "dense", {x, weights, bias},
                           [x, weights, bias, rows, in_f, out_f](std::span<const T> grad) {
                             auto gx = detail::grad_sink(x);
                             auto gw = detail::grad_sink(weights);
                             auto gb = detail::grad_sink(bias);
                             if (!gx.empty()) {
                               kernels::gemm<T>(false, true, rows, in_f, out_f, T(1), grad.data(), out_f,
                                                weights.data().data(), out_f, T(1), gx.data(), in_f);
                             }
                             if (!gw.empty()) {
                               kernels::gemm<T>(true, false, in_f, out_f, rows, T(1), x.data().data(), in_f,
                                                grad.data(), out_f, T(1), gw.data(), out_f);
                             }
                             if (!gb.empty()) {
                               for (std::int64_t r = 0; r < rows; ++r) {
                                 for (std::int64_t j = 0; j < out_f; ++j) gb[j] += grad[r * out_f + j];
                               }
                             }
                           });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor) {
  if (x.ndim() != 5) throw ShapeError("upsample_nearest: input must be 5-d, got " + to_string(x.shape()));
  if (factor < 1) throw ValueError("upsample_nearest: factor must be positive");
  const auto planes = x.dim(0) * x.dim(1);
  const auto D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const auto OD = D * factor, OH = H * factor, OW = W * factor;
  auto in = x.data();
  std::vector<T> out(static_cast<std::size_t>(planes * OD * OH * OW));
  std::size_t o = 0;
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t d = 0; d < OD; ++d) {
      for (std::int64_t h = 0; h < OH; ++h) {
        const T* row = in.data() + ((p * D + d / factor) * H + h / factor) * W;
        for (std::int64_t w = 0; w < OW; ++w) out[o++] = row[w / factor];
      }
    }
  }
  add_work(out.size());
  return detail::record<T>(Shape{x.dim(0), x.dim(1), OD, OH, OW}, std::move(out), "upsample_nearest", {x},
                           [x, planes, D, H, W, factor](std::span<const T> grad) {
                             auto gx = detail::grad_sink(x);
                             const auto OD = D * factor, OH = H * factor, OW = W * factor;
                             std::size_t o = 0;
                             for (std::int64_t p = 0; p < planes; ++p) {
                               for (std::int64_t d = 0; d < OD; ++d) {
                                 for (std::int64_t h = 0; h < OH; ++h) {
                                   T* row = gx.data() + ((p * D + d / factor) * H + h / factor) * W;
                                   for (std::int64_t w = 0; w < OW; ++w) row[w / factor] += grad[o++];
                                 }
                               }
                             }
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::record<T>(Shape{1}, std::vector<T>{acc}, "sum", {x}, [x](std::span<const T> grad) {
    auto gx = detail::grad_sink(x);
    for (auto& g : gx) g += grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

#define VOLSEG_INSTANTIATE_POINTWISE(T)                                        \
  template Tensor<T> relu(const Tensor<T>&);                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale(const Tensor<T>&, T);                               \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);              \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                        \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::int64_t);         \
  template Tensor<T> sum(const Tensor<T>&);                                    \
  template Tensor<T> mean(const Tensor<T>&);

VOLSEG_INSTANTIATE_POINTWISE(float)
VOLSEG_INSTANTIATE_POINTWISE(double)

}  // namespace volseg
