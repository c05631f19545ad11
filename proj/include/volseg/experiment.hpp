#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volseg/train.hpp"

namespace volseg {

inline constexpr int kSchemaVersion = 1;

struct PhantomDataConfig {
  PhantomSpec spec;
  std::int64_t train_count = 40;
  std::int64_t val_count = 10;
};

struct ManifestDataConfig {
  std::filesystem::path manifest;
  Extents extents{32, 32, 32};
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct ExperimentConfig {
  std::string name;
  ModelConfig model;
  std::string data_source = "phantom";  // phantom | manifest
  PhantomDataConfig phantom;
  ManifestDataConfig manifest;
  NormMethod normalization = NormMethod::zscore;
  TrainOptions train;
  OptimizerConfig optimizer;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 2;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::filesystem::path output_dir = "runs/experiment";
  bool deterministic = false;
  std::int64_t checkpoint_every = 5;
  bool parallel_seeds = false;
};

/// Parses and validates; the ConfigError lists every violated field.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical form: every field present, keys sorted.
nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a of the canonical JSON; changes whenever any field changes.
std::uint64_t fingerprint(const ExperimentConfig& config);
std::string fingerprint_hex(const ExperimentConfig& config);

struct Dataset {
  std::vector<VolumeSample> train;
  std::vector<VolumeSample> val;
};

/// Generates or loads, normalizes and (for manifests) crops the data.
Dataset load_dataset(const ExperimentConfig& config);

struct RunOptions {
  bool resume = false;
  bool quiet = false;
  // Abandons every seed after this epoch as if the process had been killed:
  // no final checkpoint, no summary. Zero disables.
  std::int64_t stop_after_epoch = 0;
};

/// Writes config.json, model_summary.{json,txt}, one seed_<s>/ directory per
/// seed (metrics.csv, metrics.jsonl, timing.csv, f1_series.csv, checkpoints)
/// and summary.json. Returns the run directory.
/// summary.json is only written once every seed has finished.
std::filesystem::path run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct ComparisonRow {
  std::string model;
  double epoch_seconds = 0.0;
  std::int64_t params = 0;
  double final_val_accuracy = 0.0;
  double best_train_f1 = 0.0;
  double best_val_f1 = 0.0;
  double best_val_f1_sd = 0.0;
  std::int64_t seeds = 0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<std::string> incomplete;  // "dir: reason"
};

/// Reads completed run directories. Writes the CSV at `csv_path`, an aligned
/// table next to it (.txt) and scatter data (_scatter.csv).
Comparison compare_runs(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& csv_path);
std::string comparison_table(const Comparison& c);

/// Writes f1_series.csv (epoch,train_f1,val_f1) for a seed directory, or for
/// every seed directory of a run. Returns the files written.
std::vector<std::filesystem::path> emit_plot_data(const std::filesystem::path& dir);

/// Builds the model of a config and returns its summary; no training.
ModelSummary summarize_config(const ExperimentConfig& config);

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

}  // namespace volseg
