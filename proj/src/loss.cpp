#include "volseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "volseg/runtime.hpp"

namespace volseg {

namespace {

struct ClassLayout {
  std::int64_t batch;
  std::int64_t classes;
  std::int64_t volume;
};

template <typename T>
ClassLayout check_labels(const Tensor<T>& logits, std::span<const std::uint8_t> labels, const char* op) {
  if (logits.ndim() < 2) {
    throw ShapeError(std::string(op) + ": logits need a class axis, got " + to_string(logits.shape()));
  }
  ClassLayout l{logits.dim(0), logits.dim(1), 0};
  l.volume = logits.numel() / (l.batch * l.classes);
  if (static_cast<std::int64_t>(labels.size()) != l.batch * l.volume) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(logits.shape()));
  }
  for (auto v : labels) {
    if (v >= l.classes) {
      throw ValueError(std::string(op) + ": label " + std::to_string(v) + " is not below the class count " +
                       std::to_string(l.classes));
    }
  }
  return l;
}

// Softmax over the class axis, computed in double.
template <typename T>
std::vector<double> softmax_classes(const Tensor<T>& logits, const ClassLayout& l) {
  const T* x = logits.data().data();
  std::vector<double> p(static_cast<std::size_t>(logits.numel()));
  for (std::int64_t n = 0; n < l.batch; ++n) {
    const auto base = n * l.classes * l.volume;
    for (std::int64_t v = 0; v < l.volume; ++v) {
      double mx = x[base + v];
      for (std::int64_t c = 1; c < l.classes; ++c) mx = std::max(mx, static_cast<double>(x[base + c * l.volume + v]));
      double z = 0.0;
      for (std::int64_t c = 0; c < l.classes; ++c) {
        const auto i = base + c * l.volume + v;
        p[i] = std::exp(x[i] - mx);
        z += p[i];
      }
      for (std::int64_t c = 0; c < l.classes; ++c) p[base + c * l.volume + v] /= z;
    }
  }
  add_work(static_cast<std::uint64_t>(4 * logits.numel()));
  return p;
}

}  // namespace

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels, double smoothing) {
  const auto l = check_labels(logits, labels, "soft_dice_loss");
  const auto p = softmax_classes(logits, l);
  const auto fg = l.classes - 1;
  // Per foreground class: intersection I, prediction mass P, target mass G.
  std::vector<double> inter(static_cast<std::size_t>(l.classes)), mass(inter.size()), target(inter.size());
  for (std::int64_t n = 0; n < l.batch; ++n) {
    for (std::int64_t c = 1; c < l.classes; ++c) {
      const double* pc = p.data() + (n * l.classes + c) * l.volume;
      const std::uint8_t* lab = labels.data() + n * l.volume;
      double i_acc = 0.0, p_acc = 0.0;
      std::int64_t g_acc = 0;
      for (std::int64_t v = 0; v < l.volume; ++v) {
        const bool hit = lab[v] == c;
        p_acc += pc[v];
        if (hit) {
          i_acc += pc[v];
          ++g_acc;
        }
      }
      inter[c] += i_acc;
      mass[c] += p_acc;
      target[c] += static_cast<double>(g_acc);
    }
  }
  double score = 0.0;
  for (std::int64_t c = 1; c < l.classes; ++c) {
    score += (2.0 * inter[c] + smoothing) / (mass[c] + target[c] + smoothing);
  }
  const double loss = 1.0 - score / static_cast<double>(fg);

  return detail::record<T>(
      Shape{}, {static_cast<T>(loss)}, "soft_dice_loss", {logits},
      [logits, labels = std::vector<std::uint8_t>(labels.begin(), labels.end()), p, inter, mass, target, l, fg,
       smoothing](std::span<const T> grad) {
        auto gx = detail::grad_sink(logits);
        if (gx.empty()) return;
        // dL/dp_c(v) = -(1/fg) * (2 t_c(v) D_c - N_c) / D_c^2 for c >= 1, 0 for background.
        std::vector<double> coeff_t(static_cast<std::size_t>(l.classes)), coeff_1(coeff_t.size());
        for (std::int64_t c = 1; c < l.classes; ++c) {
          const double den = mass[c] + target[c] + smoothing;
          const double num = 2.0 * inter[c] + smoothing;
          coeff_t[c] = -2.0 / (den * static_cast<double>(fg));
          coeff_1[c] = num / (den * den * static_cast<double>(fg));
        }
        const double g0 = grad[0];
        std::vector<double> dp(static_cast<std::size_t>(l.classes));
        for (std::int64_t n = 0; n < l.batch; ++n) {
          const auto base = n * l.classes * l.volume;
          for (std::int64_t v = 0; v < l.volume; ++v) {
            const auto lab = labels[n * l.volume + v];
            double dot = 0.0;
            for (std::int64_t c = 0; c < l.classes; ++c) {
              dp[c] = c == 0 ? 0.0 : coeff_1[c] + (lab == c ? coeff_t[c] : 0.0);
              dot += dp[c] * p[base + c * l.volume + v];
            }
            // Softmax Jacobian: dx_c = p_c (dp_c - sum_k p_k dp_k).
            for (std::int64_t c = 0; c < l.classes; ++c) {
              const auto i = base + c * l.volume + v;
              gx[i] += static_cast<T>(g0 * p[i] * (dp[c] - dot));
            }
          }
        }
      });
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const auto l = check_labels(logits, labels, "cross_entropy_loss");
  const auto p = softmax_classes(logits, l);
  const double count = static_cast<double>(l.batch * l.volume);
  double acc = 0.0;
  for (std::int64_t n = 0; n < l.batch; ++n) {
    for (std::int64_t v = 0; v < l.volume; ++v) {
      const auto c = labels[n * l.volume + v];
      acc -= std::log(std::max(p[(n * l.classes + c) * l.volume + v], 1e-300));
    }
  }
  return detail::record<T>(
      Shape{}, {static_cast<T>(acc / count)}, "cross_entropy_loss", {logits},
      [logits, labels = std::vector<std::uint8_t>(labels.begin(), labels.end()), p, l, count](std::span<const T> grad) {
        auto gx = detail::grad_sink(logits);
        if (gx.empty()) return;
        const double scale = grad[0] / count;
        for (std::int64_t n = 0; n < l.batch; ++n) {
          for (std::int64_t c = 0; c < l.classes; ++c) {
            const auto base = (n * l.classes + c) * l.volume;
            const std::uint8_t* lab = labels.data() + n * l.volume;
            for (std::int64_t v = 0; v < l.volume; ++v) {
              gx[base + v] += static_cast<T>(scale * (p[base + v] - (lab[v] == c ? 1.0 : 0.0)));
            }
          }
        }
      });
}

template Tensor<float> soft_dice_loss(const Tensor<float>&, std::span<const std::uint8_t>, double);
template Tensor<double> soft_dice_loss(const Tensor<double>&, std::span<const std::uint8_t>, double);
template Tensor<float> cross_entropy_loss(const Tensor<float>&, std::span<const std::uint8_t>);
template Tensor<double> cross_entropy_loss(const Tensor<double>&, std::span<const std::uint8_t>);

}  // namespace volseg
