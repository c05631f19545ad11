#include "volseg/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "volseg/loss.hpp"
#include "volseg/metrics.hpp"
#include "volseg/runtime.hpp"

namespace volseg {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError(FormatIssue::bad_header, "bad number '" + s + "' in metrics CSV");
  return v;
}

// Accumulates F1 either per volume (then averaged) or pooled over all voxels.
class F1Accumulator {
 public:
  F1Accumulator(F1Mode mode, std::int64_t classes) : mode_(mode), classes_(classes), pooled_(classes) {}

  void add_batch(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth, std::int64_t n) {
    const auto volume = static_cast<std::int64_t>(pred.size()) / n;
    for (std::int64_t i = 0; i < n; ++i) {
      std::span<const std::uint8_t> p(pred.data() + i * volume, static_cast<std::size_t>(volume));
      std::span<const std::uint8_t> t(truth.data() + i * volume, static_cast<std::size_t>(volume));
      if (mode_ == F1Mode::pooled) {
        pooled_.add(p, t);
      } else {
        sum_ += f1_score(p, t, classes_);
        ++volumes_;
      }
    }
  }

  double value() const {
    if (mode_ == F1Mode::pooled) return pooled_.f1();
    return volumes_ > 0 ? sum_ / static_cast<double>(volumes_) : 0.0;
  }

 private:
  F1Mode mode_;
  std::int64_t classes_;
  OverlapCounts pooled_;
  double sum_ = 0.0;
  std::int64_t volumes_ = 0;
};

}  // namespace

const char* to_string(LossKind kind) { return kind == LossKind::soft_dice ? "soft_dice" : "cross_entropy"; }
const char* to_string(F1Mode mode) { return mode == F1Mode::per_volume ? "per_volume" : "pooled"; }

LossKind parse_loss(const std::string& name) {
  if (name == "soft_dice") return LossKind::soft_dice;
  if (name == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + name + "' (expected soft_dice or cross_entropy)");
}

F1Mode parse_f1_mode(const std::string& name) {
  if (name == "per_volume") return F1Mode::per_volume;
  if (name == "pooled") return F1Mode::pooled;
  throw ConfigError("unknown f1_mode '" + name + "' (expected per_volume or pooled)");
}

DataLoader::DataLoader(const std::vector<VolumeSample>& samples, std::int64_t batch_size, bool shuffle,
                       std::uint64_t seed)
    : samples_(&samples), batch_size_(batch_size), shuffle_(shuffle), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

std::int64_t DataLoader::num_batches() const { return (num_samples() + batch_size_ - 1) / batch_size_; }

std::vector<std::vector<std::size_t>> DataLoader::epoch_order(std::int64_t epoch) const {
  std::vector<std::size_t> order(samples_->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_) {
    std::mt19937_64 rng(sample_seed(seed_, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size_)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size_));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch DataLoader::make_batch(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ValueError("make_batch: no samples");
  const auto& first = (*samples_)[indices.front()];
  const auto shape = first.image.shape();
  std::vector<float> images;
  Batch b;
  for (auto i : indices) {
    const auto& s = (*samples_)[i];
    if (s.image.shape() != shape) {
      throw ShapeError("make_batch: sample '" + s.id + "' has shape " + to_string(s.image.shape()) + ", expected " +
                       to_string(shape));
    }
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    b.labels.insert(b.labels.end(), s.label.begin(), s.label.end());
  }
  Shape batch_shape{static_cast<std::int64_t>(indices.size())};
  batch_shape.insert(batch_shape.end(), shape.begin(), shape.end());
  b.images = Tensor<float>(std::move(batch_shape), std::move(images));
  return b;
}

template <typename T>
Tensor<T> compute_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& labels, const TrainOptions& options) {
  if (options.loss == LossKind::soft_dice) return soft_dice_loss(logits, labels, options.dice_smoothing);
  return cross_entropy_loss(logits, labels);
}

EvalResult evaluate(Model<float>& model, const DataLoader& loader, const TrainOptions& options) {
  NoGradGuard no_grad;
  EvalResult r;
  F1Accumulator f1(options.f1_mode, options.num_classes);
  std::int64_t hits = 0, voxels = 0, seen = 0;
  double loss_sum = 0.0;
  for (const auto& indices : loader.epoch_order(0)) {
    const auto batch = loader.make_batch(indices);
    const auto logits = model.forward(batch.images, Mode::eval);
    const auto n = static_cast<std::int64_t>(indices.size());
    loss_sum += compute_loss(logits, batch.labels, options).item() * static_cast<double>(n);
    seen += n;
    const auto pred = argmax_labels(logits);
    f1.add_batch(pred, batch.labels, n);
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i];
    voxels += static_cast<std::int64_t>(pred.size());
  }
  if (seen == 0) return r;
  r.loss = loss_sum / static_cast<double>(seen);
  r.f1 = f1.value();
  r.accuracy = static_cast<double>(hits) / static_cast<double>(voxels);
  return r;
}

MetricsRecord train_epoch(Model<float>& model, const DataLoader& train, const DataLoader& val,
                          Optimizer<float>& optimizer, const TrainOptions& options, std::int64_t epoch) {
  if (train.num_samples() == 0) throw StateError("train_epoch: empty training loader");
  const auto start = std::chrono::steady_clock::now();
  const auto work_start = work_counter();
  MetricsRecord rec;
  rec.epoch = epoch;
  F1Accumulator f1(options.f1_mode, options.num_classes);
  double loss_sum = 0.0;
  std::int64_t seen = 0;
  for (const auto& indices : train.epoch_order(epoch)) {
    const auto batch = train.make_batch(indices);
    const auto logits = model.forward(batch.images, Mode::train);
    const auto loss = compute_loss(logits, batch.labels, options);
    const auto n = static_cast<std::int64_t>(indices.size());
    loss_sum += loss.item() * static_cast<double>(n);
    seen += n;
    f1.add_batch(argmax_labels(logits), batch.labels, n);
    loss.backward();
    optimizer.step();
  }
  rec.train_loss = loss_sum / static_cast<double>(seen);
  rec.train_f1 = f1.value();
  if (val.num_samples() > 0) {
    const auto ev = evaluate(model, val, options);
    rec.val_loss = ev.loss;
    rec.val_f1 = ev.f1;
    rec.val_accuracy = ev.accuracy;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rec.work = work_counter() - work_start;
  rec.epoch_seconds = deterministic() ? static_cast<double>(rec.work) / kNominalMacsPerSecond : rec.wall_seconds;
  return rec;
}

std::string metrics_csv_header() { return "epoch,train_loss,val_loss,train_f1,val_f1,val_accuracy,epoch_seconds"; }

std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
      << format_double(r.train_f1) << ',' << format_double(r.val_f1) << ',' << format_double(r.val_accuracy) << ','
      << format_double(r.epoch_seconds);
  return out.str();
}

MetricsRecord parse_metrics_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (cells.size() != 7) throw FormatError(FormatIssue::bad_header, "metrics CSV row has " + std::to_string(cells.size()) + " cells: " + line);
  MetricsRecord r;
  r.epoch = static_cast<std::int64_t>(parse_double(cells[0]));
  r.train_loss = parse_double(cells[1]);
  r.val_loss = parse_double(cells[2]);
  r.train_f1 = parse_double(cells[3]);
  r.val_f1 = parse_double(cells[4]);
  r.val_accuracy = parse_double(cells[5]);
  r.epoch_seconds = parse_double(cells[6]);
  return r;
}

std::string metrics_json_line(const MetricsRecord& r) {
  std::ostringstream out;
  out << "{\"epoch\":" << r.epoch << ",\"train_loss\":" << format_double(r.train_loss)
      << ",\"val_loss\":" << format_double(r.val_loss) << ",\"train_f1\":" << format_double(r.train_f1)
      << ",\"val_f1\":" << format_double(r.val_f1) << ",\"val_accuracy\":" << format_double(r.val_accuracy)
      << ",\"epoch_seconds\":" << format_double(r.epoch_seconds) << '}';
  return out.str();
}

template Tensor<float> compute_loss(const Tensor<float>&, const std::vector<std::uint8_t>&, const TrainOptions&);
template Tensor<double> compute_loss(const Tensor<double>&, const std::vector<std::uint8_t>&, const TrainOptions&);

}  // namespace volseg
