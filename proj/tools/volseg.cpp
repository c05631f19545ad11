#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "volseg/experiment.hpp"
#include "volseg/runtime.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code(volseg::ErrorCategory c) {
  switch (c) {
    case volseg::ErrorCategory::config: return 2;
    case volseg::ErrorCategory::io: return 3;
    case volseg::ErrorCategory::format: return 4;
    case volseg::ErrorCategory::shape: return 5;
    case volseg::ErrorCategory::value: return 6;
    case volseg::ErrorCategory::state: return 7;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation benchmark harness"};
  app.require_subcommand(1);

  bool deterministic = false;
  bool resume = false;
  bool quiet = false;
  std::vector<std::uint64_t> seed_override;
  std::string output;
  app.add_flag("--deterministic", deterministic, "Reproducible reductions and nominal epoch timing");

  std::string run_config;
  auto* run = app.add_subcommand("run", "Train every seed of an experiment config");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  run->add_flag("--resume", resume, "Continue from the last checkpoint of each seed");
  run->add_option("--seed-override", seed_override, "Replace the config's seed list");
  run->add_option("-o,--output", output, "Override output_dir");
  run->add_flag("-q,--quiet", quiet, "No per-epoch progress");
  run->add_flag("--deterministic", deterministic, "Reproducible reductions and nominal epoch timing");

  std::vector<std::string> compare_dirs;
  std::string compare_csv;
  auto* compare = app.add_subcommand("compare", "Tabulate finished runs");
  compare->add_option("dirs", compare_dirs, "Run directories")->required();
  compare->add_option("-o,--output", compare_csv, "Comparison CSV path")->required();

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot-data", "Write per-epoch F1 series");
  plot->add_option("dir", plot_dir, "Run or seed directory")->required();

  std::string summarize_path;
  bool as_json = false;
  auto* summarize = app.add_subcommand("summarize", "Build the model of a config and print its layer table");
  summarize->add_option("config", summarize_path, "Experiment config (JSON)")->required();
  summarize->add_flag("--json", as_json, "Print the structured summary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (deterministic) volseg::set_deterministic(true);
    if (*run) {
      auto config = volseg::load_config(run_config);
      if (deterministic) config.deterministic = true;
      if (!seed_override.empty()) config.seeds = seed_override;
      if (!output.empty()) config.output_dir = output;
      const auto dir = volseg::run_experiment(config, {resume, quiet});
      std::cout << "run written to " << dir.string() << '\n';
    } else if (*compare) {
      std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      const auto c = volseg::compare_runs(dirs, compare_csv);
      std::cout << volseg::comparison_table(c);
      if (c.rows.empty()) throw volseg::StateError("no complete run directories to compare");
      if (!c.incomplete.empty()) std::cerr << c.incomplete.size() << " run(s) incomplete, compared the rest\n";
    } else if (*plot) {
      for (const auto& f : volseg::emit_plot_data(plot_dir)) std::cout << f.string() << '\n';
    } else if (*summarize) {
      const auto s = volseg::summarize_config(volseg::load_config(summarize_path));
      std::cout << (as_json ? s.to_json().dump(2) + "\n" : s.to_table());
    }
  } catch (const volseg::Error& e) {
    std::cerr << "error[" << volseg::to_string(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
