#include "volseg/experiment.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

#include "volseg/checkpoint.hpp"
#include "volseg/nifti.hpp"
#include "volseg/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace volseg {

namespace {

// Collects every problem found while reading a config object.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {
    if (!obj_.is_object()) errors_.push_back(where("") + " must be an object");
  }

  ~FieldReader() {
    if (!obj_.is_object()) return;
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) errors_.push_back(where(key) + ": unknown field");
    }
  }

  template <typename V>
  V get(const std::string& key, V fallback, bool required = false) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) {
      if (required) errors_.push_back(where(key) + ": missing");
      return fallback;
    }
    try {
      return obj_.at(key).get<V>();
    } catch (const json::exception&) {
      errors_.push_back(where(key) + ": has the wrong type (" + std::string(obj_.at(key).type_name()) + ")");
      return fallback;
    }
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    if (!obj_.is_object() || !obj_.contains(key)) return nullptr;
    return &obj_.at(key);
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void require(bool ok, const std::string& key, const std::string& message) {
    if (!ok) errors_.push_back(where(key) + ": " + message);
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

json extents_json(const Extents& e) { return json::array({e[0], e[1], e[2]}); }

Extents read_extents(FieldReader& r, const std::string& key, Extents fallback) {
  auto v = r.get<std::vector<std::int64_t>>(key, {fallback[0], fallback[1], fallback[2]});
  if (v.size() != 3) {
    r.require(false, key, "must list 3 extents (D, H, W)");
    return fallback;
  }
  for (auto x : v) r.require(x >= 1, key, "extents must be positive");
  return {v[0], v[1], v[2]};
}

const char* to_string(NormMethod m) { return m == NormMethod::zscore ? "zscore" : "minmax"; }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (auto x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (auto x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatIssue::bad_header, path.string() + ": " + e.what());
  }
}

std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::int64_t epochs = 0;
  double best_val_f1 = 0.0;
  double best_train_f1 = 0.0;
  double final_val_accuracy = 0.0;
  double epoch_seconds = 0.0;
  double wall_seconds = 0.0;
};

fs::path seed_dir(const fs::path& run, std::uint64_t seed) { return run / ("seed_" + std::to_string(seed)); }

std::vector<std::pair<std::int64_t, std::string>> read_timing_csv(const fs::path& path) {
  std::vector<std::pair<std::int64_t, std::string>> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.emplace_back(std::stoll(line.substr(0, line.find(','))), line);
  }
  return rows;
}

std::unique_ptr<Optimizer<float>> make_optimizer(const OptimizerConfig& o, NamedTensors<float> params) {
  if (o.kind == "sgd") return std::make_unique<Sgd<float>>(std::move(params), SgdOptions{o.lr, o.momentum, o.weight_decay});
  return std::make_unique<Adam<float>>(std::move(params), AdamOptions{o.lr, o.beta1, o.beta2, o.eps, o.weight_decay});
}

SeedResult collect_seed(const fs::path& dir, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  const auto rows = read_metrics_csv(dir / "metrics.csv");
  std::vector<double> secs;
  for (const auto& m : rows) {
    r.best_val_f1 = std::max(r.best_val_f1, m.val_f1);
    r.best_train_f1 = std::max(r.best_train_f1, m.train_f1);
    r.final_val_accuracy = m.val_accuracy;
    secs.push_back(m.epoch_seconds);
  }
  r.epochs = static_cast<std::int64_t>(rows.size());
  r.epoch_seconds = mean_of(secs);
  std::vector<double> wall;
  for (const auto& [epoch, line] : read_timing_csv(dir / "timing.csv")) {
    const auto a = line.find(',');
    wall.push_back(std::stod(line.substr(a + 1, line.find(',', a + 1) - a - 1)));
  }
  r.wall_seconds = wall.empty() ? r.epoch_seconds : mean_of(wall);
  return r;
}

bool run_seed(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed, const fs::path& run,
              const RunOptions& options) {
  const auto dir = seed_dir(run, seed);
  fs::create_directories(dir);
  auto model_cfg = config.model;
  model_cfg.seed = seed;
  auto model = build_model<float>(model_cfg);
  auto optimizer = make_optimizer(config.optimizer, model->named_parameters());
  DataLoader train(data.train, config.batch_size, true, seed);
  DataLoader val(data.val, config.batch_size, false, seed);
  const auto fp = fingerprint(config);

  const auto metrics_path = dir / "metrics.csv";
  const auto jsonl_path = dir / "metrics.jsonl";
  const auto timing_path = dir / "timing.csv";
  const auto last_path = dir / "checkpoint_last.bin";
  const auto best_path = dir / "checkpoint_best.bin";

  CheckpointInfo info;
  info.fingerprint = fp;
  info.best_val_f1 = -1.0;
  std::vector<MetricsRecord> kept;
  std::vector<std::string> kept_timing;
  if (options.resume && fs::exists(last_path)) {
    info = load_checkpoint(last_path, *model, *optimizer, fp);
    for (const auto& m : read_metrics_csv(metrics_path)) {
      if (m.epoch <= info.epoch) kept.push_back(m);
    }
    for (const auto& [epoch, line] : read_timing_csv(timing_path)) {
      if (epoch <= info.epoch) kept_timing.push_back(line);
    }
    if (static_cast<std::int64_t>(kept.size()) != info.epoch) {
      throw StateError("resume: " + metrics_path.string() + " holds fewer rows than the checkpoint epoch " +
                       std::to_string(info.epoch));
    }
  }
  std::ofstream csv(metrics_path, std::ios::trunc), jsonl(jsonl_path, std::ios::trunc),
      timing(timing_path, std::ios::trunc);
  if (!csv || !jsonl || !timing) throw IoError("cannot write metrics in " + dir.string());
  csv << metrics_csv_header() << '\n';
  timing << "epoch,wall_seconds,work\n";
  for (const auto& m : kept) {
    csv << metrics_csv_row(m) << '\n';
    jsonl << metrics_json_line(m) << '\n';
  }
  for (const auto& line : kept_timing) timing << line << '\n';
  csv.flush();
  jsonl.flush();
  timing.flush();

  for (std::int64_t epoch = info.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto rec = train_epoch(*model, train, val, *optimizer, config.train, epoch);
    csv << metrics_csv_row(rec) << '\n' << std::flush;
    jsonl << metrics_json_line(rec) << '\n' << std::flush;
    timing << epoch << ',' << rec.wall_seconds << ',' << rec.work << '\n' << std::flush;
    info.epoch = epoch;
    if (rec.val_f1 > info.best_val_f1) {
      info.best_val_f1 = rec.val_f1;
      info.best_epoch = epoch;
      save_checkpoint(best_path, *model, *optimizer, info);
    }
    if (epoch % config.checkpoint_every == 0 || epoch == config.epochs) {
      save_checkpoint(last_path, *model, *optimizer, info);
    }
    if (!options.quiet) {
      std::lock_guard lock(log_mutex());
      std::cout << '[' << config.name << " seed " << seed << "] epoch " << epoch << '/' << config.epochs
                << " train_loss " << std::fixed << std::setprecision(4) << rec.train_loss << " train_f1 "
                << rec.train_f1 << " val_f1 " << rec.val_f1 << " val_acc " << rec.val_accuracy << " ("
                << std::setprecision(2) << rec.wall_seconds << " s)" << std::defaultfloat << std::endl;
    }
    if (options.stop_after_epoch > 0 && epoch >= options.stop_after_epoch && epoch < config.epochs) return false;
  }
  csv.close();
  emit_plot_data(dir);
  return true;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  {
    FieldReader r(j, "", errors);
    const auto version = r.get<int>("schema_version", 0, true);
    if (version != 0) r.require(version == kSchemaVersion, "schema_version", "unsupported version " + std::to_string(version));
    c.name = r.get<std::string>("name", "");
    const auto arch = r.get<std::string>("arch_id", "", true);
    try {
      if (!arch.empty()) c.model.arch = parse_arch(arch);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("arch_id: ") + e.what());
    }
    if (c.name.empty()) c.name = arch;

    if (const json* m = r.sub("model")) {
      FieldReader mr(*m, "model", errors);
      c.model.in_channels = mr.get<std::int64_t>("in_channels", c.model.in_channels);
      c.model.num_classes = mr.get<std::int64_t>("num_classes", c.model.num_classes);
      c.model.base_filters = mr.get<std::int64_t>("base_filters", c.model.base_filters);
      c.model.depth = mr.get<std::int64_t>("depth", c.model.depth);
      c.model.cardinality = mr.get<std::int64_t>("cardinality", c.model.cardinality);
      c.model.kernel = mr.get<std::int64_t>("kernel", c.model.kernel);
      c.model.se_reduction = mr.get<std::int64_t>("se_reduction", c.model.se_reduction);
    }
    for (const auto& e : validation_errors(c.model)) errors.push_back(e);
    r.require(c.model.num_classes <= 255, "model", "num_classes must be at most 255");

    if (const json* d = r.sub("data")) {
      FieldReader dr(*d, "data", errors);
      c.data_source = dr.get<std::string>("source", c.data_source);
      dr.require(c.data_source == "phantom" || c.data_source == "manifest", "source", "must be phantom or manifest, got '" + c.data_source + "'");
      const auto norm = dr.get<std::string>("normalization", "zscore");
      dr.require(norm == "zscore" || norm == "minmax", "normalization", "must be zscore or minmax, got '" + norm + "'");
      c.normalization = norm == "minmax" ? NormMethod::minmax : NormMethod::zscore;
      if (const json* p = dr.sub("phantom")) {
        FieldReader pr(*p, "data.phantom", errors);
        auto& s = c.phantom.spec;
        s.extents = read_extents(pr, "extents", s.extents);
        s.num_modalities = pr.get<std::int64_t>("num_modalities", c.model.in_channels);
        auto tc = pr.get<std::vector<std::int64_t>>("tumor_count", {s.tumor_count.first, s.tumor_count.second});
        pr.require(tc.size() == 2 && tc[0] >= 0 && tc[0] <= tc[1], "tumor_count", "must be [min, max] with 0 <= min <= max");
        if (tc.size() == 2) s.tumor_count = {tc[0], tc[1]};
        auto rad = pr.get<std::vector<double>>("radius", {s.radius.first, s.radius.second});
        pr.require(rad.size() == 2 && rad[0] > 0 && rad[0] <= rad[1], "radius", "must be [min, max] with 0 < min <= max");
        if (rad.size() == 2) s.radius = {rad[0], rad[1]};
        s.noise_sigma = pr.get<double>("noise_sigma", s.noise_sigma);
        pr.require(s.noise_sigma >= 0, "noise_sigma", "must be non-negative");
        s.seed = pr.get<std::uint64_t>("seed", s.seed);
        c.phantom.train_count = pr.get<std::int64_t>("train_count", c.phantom.train_count);
        c.phantom.val_count = pr.get<std::int64_t>("val_count", c.phantom.val_count);
        pr.require(c.phantom.train_count >= 1, "train_count", "must be at least 1");
        pr.require(c.phantom.val_count >= 0, "val_count", "must be non-negative");
        pr.require(s.num_modalities == c.model.in_channels, "num_modalities", "must equal model.in_channels");
        const auto min_extent = std::min({s.extents[0], s.extents[1], s.extents[2]});
        pr.require(2 * s.radius.second + 1 <= static_cast<double>(min_extent), "radius",
                   "infeasible: 2 * max + 1 exceeds the smallest extent");
      }
      if (const json* m = dr.sub("manifest")) {
        FieldReader mr(*m, "data.manifest", errors);
        c.manifest.manifest = mr.get<std::string>("path", "", c.data_source == "manifest");
        c.manifest.extents = read_extents(mr, "extents", c.manifest.extents);
        c.manifest.val_fraction = mr.get<double>("val_fraction", c.manifest.val_fraction);
        mr.require(c.manifest.val_fraction > 0 && c.manifest.val_fraction < 1, "val_fraction", "must be in (0, 1)");
        c.manifest.split_seed = mr.get<std::uint64_t>("split_seed", c.manifest.split_seed);
      } else if (c.data_source == "manifest") {
        errors.push_back("data.manifest: missing");
      }
      c.phantom.spec.num_classes = c.model.num_classes;
    }
    const auto extents = c.data_source == "manifest" ? c.manifest.extents : c.phantom.spec.extents;
    const auto multiple = spatial_multiple(c.model);
    for (auto e : extents) {
      if (e % multiple != 0) {
        errors.push_back("data." + c.data_source + ".extents: " + std::to_string(e) + " is not a multiple of " +
                         std::to_string(multiple) + " required by " + to_string(c.model.arch));
        break;
      }
    }

    if (const json* l = r.sub("loss")) {
      FieldReader lr(*l, "loss", errors);
      const auto kind = lr.get<std::string>("kind", "soft_dice");
      try {
        c.train.loss = parse_loss(kind);
      } catch (const ConfigError& e) {
        errors.push_back(std::string("loss.kind: ") + e.what());
      }
      c.train.dice_smoothing = lr.get<double>("smoothing", c.train.dice_smoothing);
      lr.require(c.train.dice_smoothing >= 0, "smoothing", "must be non-negative");
    }
    if (const json* o = r.sub("optimizer")) {
      FieldReader orr(*o, "optimizer", errors);
      auto& oc = c.optimizer;
      oc.kind = orr.get<std::string>("kind", oc.kind);
      orr.require(oc.kind == "adam" || oc.kind == "sgd", "kind", "must be adam or sgd, got '" + oc.kind + "'");
      if (oc.kind == "sgd" && !o->contains("lr")) oc.lr = 1e-2;
      oc.lr = orr.get<double>("lr", oc.lr);
      oc.beta1 = orr.get<double>("beta1", oc.beta1);
      oc.beta2 = orr.get<double>("beta2", oc.beta2);
      oc.eps = orr.get<double>("eps", oc.eps);
      oc.momentum = orr.get<double>("momentum", oc.momentum);
      oc.weight_decay = orr.get<double>("weight_decay", oc.weight_decay);
      orr.require(oc.lr >= 0, "lr", "must be non-negative");
      orr.require(oc.beta1 >= 0 && oc.beta1 < 1, "beta1", "must be in [0, 1)");
      orr.require(oc.beta2 >= 0 && oc.beta2 < 1, "beta2", "must be in [0, 1)");
      orr.require(oc.eps > 0, "eps", "must be positive");
      orr.require(oc.momentum >= 0 && oc.momentum < 1, "momentum", "must be in [0, 1)");
      orr.require(oc.weight_decay >= 0, "weight_decay", "must be non-negative");
    }
    c.epochs = r.get<std::int64_t>("epochs", c.epochs);
    r.require(c.epochs >= 0, "epochs", "must be non-negative");
    c.batch_size = r.get<std::int64_t>("batch_size", c.batch_size);
    r.require(c.batch_size >= 1, "batch_size", "must be at least 1");
    c.seeds = r.get<std::vector<std::uint64_t>>("seeds", c.seeds);
    r.require(!c.seeds.empty(), "seeds", "must list at least one seed");
    r.require(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(), "seeds",
              "must not repeat");
    c.output_dir = r.get<std::string>("output_dir", c.output_dir.string());
    r.require(!c.output_dir.empty(), "output_dir", "must not be empty");
    c.deterministic = r.get<bool>("deterministic", c.deterministic);
    c.checkpoint_every = r.get<std::int64_t>("checkpoint_every", c.checkpoint_every);
    r.require(c.checkpoint_every >= 1, "checkpoint_every", "must be at least 1");
    const auto f1 = r.get<std::string>("f1_mode", "per_volume");
    try {
      c.train.f1_mode = parse_f1_mode(f1);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("f1_mode: ") + e.what());
    }
    c.parallel_seeds = r.get<bool>("parallel_seeds", c.parallel_seeds);
  }
  c.train.num_classes = c.model.num_classes;
  if (!errors.empty()) {
    std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() > 1 ? "s" : "") + ")";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  auto c = parse_config(read_json(path));
  // Relative manifest paths are resolved against the config file.
  if (c.data_source == "manifest" && c.manifest.manifest.is_relative()) {
    c.manifest.manifest = path.parent_path() / c.manifest.manifest;
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json data = {{"source", c.data_source}, {"normalization", to_string(c.normalization)}};
  if (c.data_source == "phantom") {
    const auto& s = c.phantom.spec;
    data["phantom"] = {{"extents", extents_json(s.extents)},
                       {"num_modalities", s.num_modalities},
                       {"tumor_count", {s.tumor_count.first, s.tumor_count.second}},
                       {"radius", {s.radius.first, s.radius.second}},
                       {"noise_sigma", s.noise_sigma},
                       {"seed", s.seed},
                       {"train_count", c.phantom.train_count},
                       {"val_count", c.phantom.val_count}};
  } else {
    data["manifest"] = {{"path", c.manifest.manifest.string()},
                        {"extents", extents_json(c.manifest.extents)},
                        {"val_fraction", c.manifest.val_fraction},
                        {"split_seed", c.manifest.split_seed}};
  }
  const auto& o = c.optimizer;
  return {
      {"schema_version", kSchemaVersion},
      {"name", c.name},
      {"arch_id", to_string(c.model.arch)},
      {"model",
       {{"in_channels", c.model.in_channels},
        {"num_classes", c.model.num_classes},
        {"base_filters", c.model.base_filters},
        {"depth", c.model.depth},
        {"cardinality", c.model.cardinality},
        {"kernel", c.model.kernel},
        {"se_reduction", c.model.se_reduction}}},
      {"data", data},
      {"loss", {{"kind", to_string(c.train.loss)}, {"smoothing", c.train.dice_smoothing}}},
      {"optimizer",
       {{"kind", o.kind},
        {"lr", o.lr},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"eps", o.eps},
        {"momentum", o.momentum},
        {"weight_decay", o.weight_decay}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir.string()},
      {"deterministic", c.deterministic},
      {"checkpoint_every", c.checkpoint_every},
      {"f1_mode", to_string(c.train.f1_mode)},
      {"parallel_seeds", c.parallel_seeds},
  };
}

std::uint64_t fingerprint(const ExperimentConfig& config) {
  // Batchnorm constants are fixed in code but belong to the recorded setup.
  auto j = to_json(config);
  j["batchnorm"] = {{"eps", 1e-5}, {"momentum", 0.1}};
  return fnv1a(j.dump());
}

std::string fingerprint_hex(const ExperimentConfig& config) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fingerprint(config);
  return out.str();
}

Dataset load_dataset(const ExperimentConfig& c) {
  Dataset d;
  if (c.data_source == "phantom") {
    auto all = generate_phantom_set(c.phantom.spec, c.phantom.train_count + c.phantom.val_count, "phantom_");
    for (auto& s : all) s.image = normalize(s.image, c.normalization);
    for (std::size_t i = 0; i < all.size(); ++i) {
      (static_cast<std::int64_t>(i) < c.phantom.train_count ? d.train : d.val).push_back(std::move(all[i]));
    }
    return d;
  }
  const auto manifest = read_json(c.manifest.manifest);
  const auto base = c.manifest.manifest.parent_path();
  if (!manifest.contains("samples") || !manifest["samples"].is_array()) {
    throw FormatError(FormatIssue::bad_header, c.manifest.manifest.string() + ": expected a \"samples\" array");
  }
  std::vector<VolumeSample> samples;
  std::vector<std::string> ids;
  for (const auto& entry : manifest["samples"]) {
    VolumeSample s;
    s.id = entry.value("id", "sample" + std::to_string(samples.size()));
    std::vector<float> image;
    Extents extents{};
    std::int64_t channels = 0;
    for (const auto& p : entry.at("images")) {
      const auto img = read_nifti(base / p.get<std::string>());
      const auto& sh = img.shape;
      const Extents e{sh[sh.size() - 3], sh[sh.size() - 2], sh[sh.size() - 1]};
      if (channels > 0 && e != extents) throw ShapeError("manifest sample '" + s.id + "': modalities differ in shape");
      extents = e;
      channels += sh.size() == 4 ? sh[0] : 1;
      image.insert(image.end(), img.data.begin(), img.data.end());
      s.voxel_spacing = img.spacing;
    }
    if (channels != c.model.in_channels) {
      throw ShapeError("manifest sample '" + s.id + "' has " + std::to_string(channels) + " modalities, model expects " +
                       std::to_string(c.model.in_channels));
    }
    s.image = Tensor<float>(Shape{channels, extents[0], extents[1], extents[2]}, std::move(image));
    const auto label = read_nifti(base / entry.at("label").get<std::string>());
    if (numel(label.shape) != extents[0] * extents[1] * extents[2]) {
      throw ShapeError("manifest sample '" + s.id + "': label shape differs from the image");
    }
    for (auto v : label.data) s.label.push_back(static_cast<std::uint8_t>(std::lround(std::max(0.0f, v))));
    check_sample(s, c.model.num_classes);
    s.image = normalize(s.image, c.normalization);
    samples.push_back(crop_or_pad(s, c.manifest.extents));
    ids.push_back(s.id);
  }
  const auto split = split_dataset(ids, c.manifest.val_fraction, c.manifest.split_seed);
  std::set<std::string> val_ids(split.val.begin(), split.val.end());
  for (auto& s : samples) (val_ids.count(s.id) ? d.val : d.train).push_back(std::move(s));
  return d;
}

ModelSummary summarize_config(const ExperimentConfig& config) {
  return summarize(*build_model<float>(config.model));
}

fs::path run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  if (config.deterministic) set_deterministic(true);
  const auto run = config.output_dir;
  fs::create_directories(run);
  auto config_json = to_json(config);
  config_json["fingerprint"] = fingerprint_hex(config);
  write_text(run / "config.json", config_json.dump(2) + "\n");
  const auto summary = summarize_config(config);
  write_text(run / "model_summary.json", summary.to_json().dump(2) + "\n");
  write_text(run / "model_summary.txt", summary.to_table());
  fs::remove(run / "summary.json");

  const auto data = load_dataset(config);
  if (config.epochs > 0 && data.train.empty()) throw ConfigError("data: no training samples");
  bool complete = true;
  if (config.parallel_seeds && config.seeds.size() > 1) {
    std::vector<std::future<bool>> jobs;
    for (auto seed : config.seeds) {
      jobs.push_back(std::async(std::launch::async, [&, seed] { return run_seed(config, data, seed, run, options); }));
    }
    for (auto& j : jobs) complete = j.get() && complete;
  } else {
    for (auto seed : config.seeds) complete = run_seed(config, data, seed, run, options) && complete;
  }
  if (!complete) return run;

  json seeds = json::array();
  std::vector<double> best_val, best_train, final_acc, secs, wall;
  for (auto seed : config.seeds) {
    const auto r = collect_seed(seed_dir(run, seed), seed);
    seeds.push_back({{"seed", r.seed},
                     {"epochs", r.epochs},
                     {"best_val_f1", r.best_val_f1},
                     {"best_train_f1", r.best_train_f1},
                     {"final_val_accuracy", r.final_val_accuracy},
                     {"epoch_seconds", r.epoch_seconds},
                     {"wall_seconds", r.wall_seconds}});
    best_val.push_back(r.best_val_f1);
    best_train.push_back(r.best_train_f1);
    final_acc.push_back(r.final_val_accuracy);
    secs.push_back(r.epoch_seconds);
    wall.push_back(r.wall_seconds);
  }
  auto stats = [&](auto fn) {
    return json{{"best_val_f1", fn(best_val)},
                {"best_train_f1", fn(best_train)},
                {"final_val_accuracy", fn(final_acc)},
                {"epoch_seconds", fn(secs)},
                {"wall_seconds", fn(wall)}};
  };
  json out = {{"name", config.name},
              {"arch", to_string(config.model.arch)},
              {"fingerprint", fingerprint_hex(config)},
              {"params", summary.total_params},
              {"convs", summary.convs},
              {"transposed_convs", summary.transposed_convs},
              {"pools", summary.pools},
              {"epochs", config.epochs},
              {"deterministic", deterministic()},
              {"seeds", seeds},
              {"mean", stats(mean_of)},
              {"sd", stats(sd_of)}};
  write_text(run / "summary.json", out.dump(2) + "\n");
  return run;
}

std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) {
    throw FormatError(FormatIssue::bad_header, path.string() + " does not start with the metrics header");
  }
  std::vector<MetricsRecord> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_metrics_csv_row(line));
  }
  return rows;
}

std::vector<fs::path> emit_plot_data(const fs::path& dir) {
  std::vector<fs::path> written;
  if (!fs::exists(dir / "metrics.csv")) {
    bool any = false;
    if (fs::is_directory(dir)) {
      std::vector<fs::path> subdirs;
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "metrics.csv")) subdirs.push_back(e.path());
      }
      std::sort(subdirs.begin(), subdirs.end());
      for (const auto& s : subdirs) {
        auto w = emit_plot_data(s);
        written.insert(written.end(), w.begin(), w.end());
        any = true;
      }
    }
    if (!any) throw IoError("no metrics.csv under " + dir.string());
    return written;
  }
  const auto rows = read_metrics_csv(dir / "metrics.csv");
  std::ostringstream out;
  out << "epoch,train_f1,val_f1\n";
  for (const auto& r : rows) {
    const auto cells = metrics_csv_row(r);
    // Reuse the metrics CSV text so the values match it character for character.
    std::vector<std::string> parts;
    std::stringstream ss(cells);
    std::string cell;
    while (std::getline(ss, cell, ',')) parts.push_back(cell);
    out << parts[0] << ',' << parts[3] << ',' << parts[4] << '\n';
  }
  write_text(dir / "f1_series.csv", out.str());
  written.push_back(dir / "f1_series.csv");
  return written;
}

Comparison compare_runs(const std::vector<fs::path>& run_dirs, const fs::path& csv_path) {
  Comparison c;
  for (const auto& dir : run_dirs) {
    try {
      if (!fs::exists(dir / "summary.json")) throw IoError("summary.json missing (run not finished)");
      const auto s = read_json(dir / "summary.json");
      ComparisonRow row;
      row.model = s.at("name").get<std::string>();
      row.params = s.at("params").get<std::int64_t>();
      const auto& mean = s.at("mean");
      row.epoch_seconds = mean.at("wall_seconds").get<double>();
      row.final_val_accuracy = mean.at("final_val_accuracy").get<double>();
      row.best_train_f1 = mean.at("best_train_f1").get<double>();
      row.best_val_f1 = mean.at("best_val_f1").get<double>();
      row.best_val_f1_sd = s.at("sd").at("best_val_f1").get<double>();
      row.seeds = static_cast<std::int64_t>(s.at("seeds").size());
      for (const auto& seed : s.at("seeds")) {
        if (seed.at("epochs").get<std::int64_t>() != s.at("epochs").get<std::int64_t>()) {
          throw StateError("seed " + std::to_string(seed.at("seed").get<std::uint64_t>()) + " did not finish");
        }
      }
      c.rows.push_back(row);
    } catch (const std::exception& e) {
      c.incomplete.push_back(dir.string() + ": " + e.what());
    }
  }
  if (csv_path.empty()) return c;
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  std::ostringstream csv, scatter;
  csv << "model,epoch_seconds,params,final_val_accuracy,best_train_f1,best_val_f1\n";
  scatter << "model,epoch_seconds,best_val_f1,params\n";
  for (const auto& r : c.rows) {
    csv << r.model << ',' << r.epoch_seconds << ',' << r.params << ',' << r.final_val_accuracy << ','
        << r.best_train_f1 << ',' << r.best_val_f1 << '\n';
    scatter << r.model << ',' << r.epoch_seconds << ',' << r.best_val_f1 << ',' << r.params << '\n';
  }
  write_text(csv_path, csv.str());
  auto txt = csv_path;
  txt.replace_extension(".txt");
  write_text(txt, comparison_table(c));
  auto sc = csv_path;
  sc.replace_filename(csv_path.stem().string() + "_scatter.csv");
  write_text(sc, scatter.str());
  return c;
}

std::string comparison_table(const Comparison& c) {
  std::size_t w = 5;
  for (const auto& r : c.rows) w = std::max(w, r.model.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(w)) << "Model" << std::right << std::setw(16) << "Time/epoch (s)"
      << std::setw(12) << "Params" << std::setw(10) << "Val acc" << std::setw(10) << "Train F1" << std::setw(18)
      << "Val F1" << '\n';
  for (const auto& r : c.rows) {
    std::ostringstream f1;
    f1 << std::fixed << std::setprecision(4) << r.best_val_f1 << " +/- " << r.best_val_f1_sd;
    out << std::left << std::setw(static_cast<int>(w)) << r.model << std::right << std::fixed << std::setprecision(2)
        << std::setw(16) << r.epoch_seconds << std::setw(12) << r.params << std::setprecision(4) << std::setw(10)
        << r.final_val_accuracy << std::setw(10) << r.best_train_f1 << std::setw(18) << f1.str() << '\n';
  }
  for (const auto& i : c.incomplete) out << "incomplete: " << i << '\n';
  return out.str();
}

}  // namespace volseg
