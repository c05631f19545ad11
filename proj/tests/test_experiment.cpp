#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "volseg/experiment.hpp"
#include "volseg/nifti.hpp"

using namespace volseg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config(const fs::path& out) {
  return {
      {"schema_version", 1},
      {"name", "small"},
      {"arch_id", "unet3d"},
      {"model", {{"in_channels", 2}, {"num_classes", 2}, {"base_filters", 4}, {"depth", 2}}},
      {"data",
       {{"source", "phantom"},
        {"phantom",
         {{"extents", {8, 8, 8}},
          {"num_modalities", 2},
          {"tumor_count", {1, 1}},
          {"radius", {1, 2}},
          {"seed", 3},
          {"train_count", 4},
          {"val_count", 2}}}}},
      {"epochs", 4},
      {"batch_size", 2},
      {"seeds", {0}},
      {"output_dir", out.string()},
      {"deterministic", true},
      {"checkpoint_every", 2},
  };
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("parse_config: canonical files load") {
  for (auto a : kAllArchs) {
    const auto c = load_config(fs::path(VOLSEG_SOURCE_DIR) / "configs/canonical" / (std::string(to_string(a)) + ".json"));
    CHECK(c.model.arch == a);
    CHECK(c.seeds.size() == 3);
    CHECK(c.epochs == 20);
  }
}

TEST_CASE("parse_config: every problem is listed") {
  auto j = small_config("x");
  j["epochs"] = -1;
  j["batch_size"] = 0;
  j["optimizer"] = {{"kind", "rmsprop"}};
  j["seeds"] = json::array();
  j["bogus"] = 1;
  j["data"]["phantom"]["extents"] = {8, 8, 6};
  try {
    parse_config(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* field : {"epochs", "batch_size", "rmsprop", "seeds", "bogus", "extents"}) {
      const std::string f = field;
      CAPTURE(f);
      CAPTURE(msg);
      CHECK(msg.find(f) != std::string::npos);
    }
  }
  auto v = small_config("x");
  v["schema_version"] = 2;
  CHECK_THROWS_AS(parse_config(v), ConfigError);
  auto m = small_config("x");
  m["arch_id"] = "unet2d";
  CHECK_THROWS_AS(parse_config(m), ConfigError);
}

TEST_CASE("config round-trips through its canonical form") {
  const auto c = parse_config(small_config("out"));
  const auto again = parse_config(to_json(c));
  CHECK(to_json(again) == to_json(c));
  CHECK(fingerprint(again) == fingerprint(c));
  CHECK(fingerprint_hex(c).size() == 16);
}

TEST_CASE("fingerprint changes with any field") {
  const auto base = fingerprint(parse_config(small_config("out")));
  auto changed = [&](const std::function<void(json&)>& edit) {
    auto j = small_config("out");
    edit(j);
    return fingerprint(parse_config(j)) != base;
  };
  CHECK(changed([](json& j) { j["epochs"] = 5; }));
  CHECK(changed([](json& j) { j["model"]["base_filters"] = 8; }));
  CHECK(changed([](json& j) { j["data"]["phantom"]["seed"] = 4; }));
  CHECK(changed([](json& j) { j["optimizer"] = {{"lr", 0.01}}; }));
  CHECK(changed([](json& j) { j["arch_id"] = "se_unet3d"; }));
  CHECK_FALSE(changed([](json&) {}));
}

TEST_CASE("dry run: zero epochs") {
  const auto out = helpers::scratch_dir("dry_run");
  auto j = small_config(out);
  j["epochs"] = 0;
  const auto run = run_experiment(parse_config(j), {false, true});
  CHECK(slurp(run / "seed_0" / "metrics.csv") == metrics_csv_header() + "\n");
  CHECK(slurp(run / "seed_0" / "f1_series.csv") == "epoch,train_f1,val_f1\n");
  const auto summary = json::parse(slurp(run / "summary.json"));
  CHECK(summary["params"] == summarize_config(parse_config(j)).total_params);
  CHECK(summary["epochs"] == 0);
  CHECK(fs::exists(run / "model_summary.txt"));
  CHECK(json::parse(slurp(run / "config.json"))["fingerprint"] == fingerprint_hex(parse_config(j)));
}

TEST_CASE("deterministic runs write byte-identical metrics") {
  const auto a = run_experiment(parse_config(small_config(helpers::scratch_dir("det_a"))), {false, true});
  const auto b = run_experiment(parse_config(small_config(helpers::scratch_dir("det_b"))), {false, true});
  for (const char* f : {"metrics.csv", "metrics.jsonl", "f1_series.csv"}) {
    CAPTURE(f);
    CHECK(slurp(a / "seed_0" / f) == slurp(b / "seed_0" / f));
  }
  CHECK(lines(a / "seed_0" / "metrics.csv") == 5);
  CHECK(lines(a / "seed_0" / "f1_series.csv") == 5);
  CHECK(fs::exists(a / "seed_0" / "checkpoint_best.bin"));
  CHECK(fs::exists(a / "seed_0" / "checkpoint_last.bin"));
}

TEST_CASE("resume after an interruption reproduces the uninterrupted run") {
  const auto full = run_experiment(parse_config(small_config(helpers::scratch_dir("resume_full"))), {false, true});
  const auto cfg = parse_config(small_config(helpers::scratch_dir("resume_cut")));
  RunOptions cut{false, true, 3};
  const auto run = run_experiment(cfg, cut);
  CHECK(lines(run / "seed_0" / "metrics.csv") == 4);  // header + 3 epochs, checkpoint at 2
  CHECK_FALSE(fs::exists(run / "summary.json"));

  const auto cmp = compare_runs({run}, helpers::scratch_dir("resume_cmp") / "cmp.csv");
  CHECK(cmp.rows.empty());
  CHECK(cmp.incomplete.size() == 1);

  run_experiment(cfg, {true, true});
  CHECK(slurp(run / "seed_0" / "metrics.csv") == slurp(full / "seed_0" / "metrics.csv"));
  CHECK(fs::exists(run / "summary.json"));

  auto other = small_config(run);
  other["optimizer"] = {{"lr", 0.5}};
  CHECK_THROWS_AS(run_experiment(parse_config(other), {true, true}), StateError);
}

TEST_CASE("compare: one row per run, values from the summary") {
  const auto run = run_experiment(parse_config(small_config(helpers::scratch_dir("cmp_run"))), {false, true});
  const auto csv = helpers::scratch_dir("cmp_out") / "table.csv";
  const auto c = compare_runs({run, helpers::scratch_dir("cmp_missing")}, csv);
  REQUIRE(c.rows.size() == 1);
  CHECK(c.incomplete.size() == 1);
  const auto summary = json::parse(slurp(run / "summary.json"));
  CHECK(c.rows[0].model == "small");
  CHECK(c.rows[0].params == summary["params"].get<std::int64_t>());
  CHECK(c.rows[0].best_val_f1 == summary["mean"]["best_val_f1"].get<double>());
  CHECK(c.rows[0].seeds == 1);
  CHECK(lines(csv) == 2);
  CHECK(slurp(csv).rfind("model,epoch_seconds,params,final_val_accuracy,best_train_f1,best_val_f1\n", 0) == 0);
  CHECK(fs::exists(csv.parent_path() / "table.txt"));
  CHECK(fs::exists(csv.parent_path() / "table_scatter.csv"));
  CHECK(comparison_table(c).find("small") != std::string::npos);
}

TEST_CASE("plot data: series match metrics.csv") {
  const auto run = run_experiment(parse_config(small_config(helpers::scratch_dir("plot_run"))), {false, true});
  fs::remove(run / "seed_0" / "f1_series.csv");
  const auto written = emit_plot_data(run);
  REQUIRE(written.size() == 1);
  const auto rows = read_metrics_csv(run / "seed_0" / "metrics.csv");
  std::ifstream in(written[0]);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_f1,val_f1");
  for (const auto& r : rows) {
    REQUIRE(std::getline(in, line));
    std::stringstream ss(line);
    std::string e, tf, vf;
    std::getline(ss, e, ',');
    std::getline(ss, tf, ',');
    std::getline(ss, vf, ',');
    CHECK(std::stoll(e) == r.epoch);
    CHECK(std::stod(tf) == r.train_f1);
    CHECK(std::stod(vf) == r.val_f1);
  }
  CHECK_THROWS_AS(emit_plot_data(helpers::scratch_dir("plot_empty")), IoError);
}

TEST_CASE("manifest data: NIfTI volumes, crop and split") {
  const auto dir = helpers::scratch_dir("manifest");
  json samples = json::array();
  for (int s = 0; s < 5; ++s) {
    std::vector<std::string> images;
    for (int m = 0; m < 2; ++m) {
      NiftiImage img;
      img.shape = {6, 10, 8};
      img.data.resize(480);
      for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * (s + 1) + m) % 17);
      const auto name = "s" + std::to_string(s) + "_m" + std::to_string(m) + ".nii";
      write_nifti(img, dir / name);
      images.push_back(name);
    }
    NiftiImage label;
    label.shape = {6, 10, 8};
    label.datatype = NiftiDatatype::uint8;
    label.data.assign(480, 0.0f);
    label.data[s * 7] = 1.0f;
    write_nifti(label, dir / ("s" + std::to_string(s) + "_label.nii"));
    samples.push_back({{"id", "case" + std::to_string(s)}, {"images", images}, {"label", "s" + std::to_string(s) + "_label.nii"}});
  }
  std::ofstream(dir / "manifest.json") << json{{"samples", samples}}.dump();

  auto j = small_config(dir / "run");
  j["data"] = {{"source", "manifest"}, {"manifest", {{"path", "manifest.json"}, {"extents", {8, 8, 8}}, {"val_fraction", 0.4}}}};
  std::ofstream(dir / "config.json") << j.dump();
  const auto c = load_config(dir / "config.json");
  const auto d = load_dataset(c);
  CHECK(d.train.size() == 3);
  CHECK(d.val.size() == 2);
  for (const auto* set : {&d.train, &d.val}) {
    for (const auto& s : *set) {
      CHECK(s.image.shape() == Shape{2, 8, 8, 8});
      CHECK(s.label.size() == 512);
    }
  }

  auto wrong = c;
  wrong.model.in_channels = 3;
  CHECK_THROWS_AS(load_dataset(wrong), ShapeError);
  auto missing = c;
  missing.manifest.manifest = dir / "nope.json";
  CHECK_THROWS_AS(load_dataset(missing), IoError);
}
