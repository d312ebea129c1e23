#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "vflab/dataset.hpp"
#include "vflab/harness.hpp"

namespace {

using namespace vflab;
using nlohmann::json;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path));
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open '{}'", path));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path, e.what()));
  }
}

std::string groups_path_for(const std::string& csv) {
  const auto dot = csv.rfind('.');
  return (dot == std::string::npos ? csv : csv.substr(0, dot)) + ".groups.json";
}

void progress(std::string_view msg) { std::cerr << msg << '\n'; }

std::vector<harness::ExperimentConfig> load_configs(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfgs = harness::load_experiments(path);
  if (seed)
    for (auto& c : cfgs) c.seed = *seed;
  return cfgs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vertical federated learning lab for alarm-based fault classification"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override the seed of the config");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "No progress lines on stderr");

  std::string spec_path, csv_out, groups_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic alarm dataset");
  gen->add_option("spec", spec_path, "Generator spec JSON")->required();
  gen->add_option("out", csv_out, "Output CSV")->required();
  gen->add_option("--groups", groups_out, "Feature-group table (default: <out>.groups.json)");

  std::string in_csv, pre_out;
  auto* pre = app.add_subcommand("preprocess", "Drop all-zero features and bin alarm seconds into 0..3");
  pre->add_option("in", in_csv, "Raw CSV")->required();
  pre->add_option("out", pre_out, "Binned CSV")->required();

  std::string config_path, report_out;
  auto* run = app.add_subcommand("run", "Run experiments and write a metrics report");
  run->add_option("config", config_path, "Experiment config JSON")->required();
  run->add_option("--out", report_out, "Report JSON (default: stdout)");

  auto* grid = app.add_subcommand("grid", "Run experiments and print every grid point");
  grid->add_option("config", config_path, "Experiment config JSON")->required();

  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "Measure training time per model and scenario");
  bench->add_option("config", config_path, "Bench config JSON")->required();
  bench->add_option("--out", bench_out, "Timing JSON (default: stdout)");

  std::string report_in, format = "md";
  auto* report = app.add_subcommand("report", "Render a report or timing JSON as a table");
  report->add_option("report", report_in, "Report JSON")->required();
  report->add_option("--format", format, "md or csv")->check(CLI::IsMember({"md", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const harness::Progress prog = quiet ? harness::Progress{} : harness::Progress{progress};
  try {
    if (*gen) {
      const auto spec = data::GeneratorSpec::load(spec_path);
      const auto d = data::generate_synthetic(spec, seed.value_or(0));
      std::ofstream out(csv_out);
      if (!out) throw Error(fmt::format("cannot write '{}'", csv_out));
      data::write_csv(out, d);
      write_text(groups_out.empty() ? groups_path_for(csv_out) : groups_out, spec.feature_groups().to_json().dump(2) + "\n");
    } else if (*pre) {
      const auto binned = data::bin_alarm_counts(data::drop_all_zero_features(data::load_csv(in_csv)));
      std::ofstream out(pre_out);
      if (!out) throw Error(fmt::format("cannot write '{}'", pre_out));
      data::write_binned_csv(out, binned);
    } else if (*run) {
      json reports = json::array();
      for (const auto& c : load_configs(config_path, seed)) reports.push_back(harness::run(c, prog).to_json());
      write_text(report_out, json{{"reports", reports}}.dump(2) + "\n");
    } else if (*grid) {
      for (const auto& c : load_configs(config_path, seed)) {
        const auto r = harness::run(c, prog);
        std::cout << "## " << r.name << "\n\n| Params | Accuracy (%) | Macro-F1 (%) |\n|---|---|---|\n";
        auto row = [](const harness::GridPointResult& g, std::string_view tag) {
          std::cout << fmt::format("| {}{} | {:.2f} ± {:.2f} | {:.2f} ± {:.2f} |\n", tag, g.params.dump(), g.accuracy.mean,
                                   g.accuracy.std, g.macro_f1.mean, g.macro_f1.std);
        };
        for (const auto& g : r.grid) row(g, g.params == r.winner_params ? "* " : "");
        for (const auto& p : r.parties) row(p.winner, p.party + ": ");
        std::cout << '\n';
      }
    } else if (*bench) {
      auto cfg = harness::BenchConfig::load(config_path);
      if (seed) cfg.seed = *seed;
      json rows = json::array();
      for (const auto& r : harness::benchmark_time(cfg, prog)) rows.push_back(r.to_json());
      write_text(bench_out, json{{"timing", rows}}.dump(2) + "\n");
    } else if (*report) {
      const auto doc = read_json(report_in);
      std::cout << (format == "csv" ? harness::render_csv(doc) : harness::render_markdown(doc));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
