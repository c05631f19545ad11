#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volseg/model.hpp"
#include "volseg/optim.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class LossKind { soft_dice, cross_entropy };
enum class F1Mode { per_volume, pooled };

const char* to_string(LossKind kind);
const char* to_string(F1Mode mode);
LossKind parse_loss(const std::string& name);
F1Mode parse_f1_mode(const std::string& name);

struct TrainOptions {
  LossKind loss = LossKind::soft_dice;
  double dice_smoothing = 1.0;
  F1Mode f1_mode = F1Mode::per_volume;
  std::int64_t num_classes = 2;
};

struct Batch {
  Tensor<float> images;               // [N, C, D, H, W]
  std::vector<std::uint8_t> labels;   // N * D * H * W
};

/// Groups samples into batches; the order is reshuffled per epoch from
/// (seed, epoch) when shuffling is on. The last batch may be short.
class DataLoader {
 public:
  DataLoader(const std::vector<VolumeSample>& samples, std::int64_t batch_size, bool shuffle, std::uint64_t seed);

  std::int64_t num_samples() const { return static_cast<std::int64_t>(samples_->size()); }
  std::int64_t num_batches() const;
  std::vector<std::vector<std::size_t>> epoch_order(std::int64_t epoch) const;
  Batch make_batch(const std::vector<std::size_t>& indices) const;

 private:
  const std::vector<VolumeSample>* samples_;
  std::int64_t batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
};

struct EvalResult {
  double loss = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

struct MetricsRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
  double val_accuracy = 0.0;
  // Wall-clock seconds, or nominal seconds derived from counted work in
  // deterministic mode so that records are reproducible.
  double epoch_seconds = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t work = 0;  // multiply-accumulates and elementwise ops counted during the epoch
};

template <typename T>
Tensor<T> compute_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& labels, const TrainOptions& options);

/// Eval-mode pass without gradient recording; leaves parameters and running
/// statistics untouched.
EvalResult evaluate(Model<float>& model, const DataLoader& loader, const TrainOptions& options);

/// One pass over `train` in train mode (one optimizer step per batch), then
/// evaluate() on `val`.
MetricsRecord train_epoch(Model<float>& model, const DataLoader& train, const DataLoader& val,
                          Optimizer<float>& optimizer, const TrainOptions& options, std::int64_t epoch);

/// CSV header and row for the per-epoch metrics file.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
MetricsRecord parse_metrics_csv_row(const std::string& line);
std::string metrics_json_line(const MetricsRecord& r);

}  // namespace volseg
