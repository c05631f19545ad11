#include "volseg/metrics.hpp"

#include <string>

namespace volseg {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": sizes differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

double dice_from_counts(std::int64_t inter, std::int64_t pred, std::int64_t truth) {
  if (pred + truth == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(pred + truth);
}

}  // namespace

double dice_score(std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> true_mask) {
  require_same_size(pred_mask.size(), true_mask.size(), "dice_score");
  std::int64_t inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool a = pred_mask[i] != 0, b = true_mask[i] != 0;
    p += a;
    t += b;
    inter += a && b;
  }
  return dice_from_counts(inter, p, t);
}

double pixel_accuracy(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  require_same_size(pred.size(), truth.size(), "pixel_accuracy");
  if (pred.empty()) throw ValueError("pixel_accuracy: empty volume");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  if (logits.ndim() < 2) throw ShapeError("argmax_labels: logits need a class axis, got " + to_string(logits.shape()));
  const auto batch = logits.dim(0), classes = logits.dim(1);
  if (classes > 256) throw ValueError("argmax_labels: more than 256 classes");
  const auto volume = logits.numel() / (batch * classes);
  const T* x = logits.data().data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(batch * volume));
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t v = 0; v < volume; ++v) {
      const T* base = x + n * classes * volume + v;
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (base[c * volume] > base[best * volume]) best = c;
      }
      out[n * volume + v] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

OverlapCounts::OverlapCounts(std::int64_t num_classes)
    : intersection(static_cast<std::size_t>(num_classes)),
      predicted(static_cast<std::size_t>(num_classes)),
      actual(static_cast<std::size_t>(num_classes)) {
  if (num_classes < 2) throw ValueError("f1: need at least 2 classes");
}

void OverlapCounts::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  require_same_size(pred.size(), truth.size(), "f1_score");
  const auto classes = intersection.size();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i], t = truth[i];
    if (p >= classes || t >= classes) throw ValueError("f1_score: label " + std::to_string(std::max(p, t)) +
                                                       " is not below the class count " + std::to_string(classes));
    ++predicted[p];
    ++actual[t];
    if (p == t) ++intersection[p];
  }
}

double OverlapCounts::f1() const {
  double acc = 0.0;
  for (std::size_t c = 1; c < intersection.size(); ++c) acc += dice_from_counts(intersection[c], predicted[c], actual[c]);
  return acc / static_cast<double>(intersection.size() - 1);
}

double f1_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::int64_t num_classes) {
  OverlapCounts counts(num_classes);
  counts.add(pred, truth);
  return counts.f1();
}

template std::vector<std::uint8_t> argmax_labels(const Tensor<float>&);
template std::vector<std::uint8_t> argmax_labels(const Tensor<double>&);

}  // namespace volseg
