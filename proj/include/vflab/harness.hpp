#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"
#include "vflab/dataset.hpp"
#include "vflab/metrics.hpp"

namespace vflab::harness {

enum class ModelKind { Xgb, Nn, FedTree, FedTreeHe, SplitNn };
enum class Cooperation { Federated, Centralized, NonCooperative };

ModelKind parse_model(std::string_view s);
std::string_view to_string(ModelKind m);
Cooperation parse_cooperation(std::string_view s);
std::string_view to_string(Cooperation c);

/// Either a CSV plus feature-group table, or a generator spec plus seed.
struct DataSource {
  std::optional<std::filesystem::path> csv;
  std::optional<std::filesystem::path> groups;
  std::optional<nlohmann::json> generator;  // inline spec, or loaded from generator_path
  std::optional<std::filesystem::path> generator_path;
  std::uint64_t generator_seed = 0;

  /// Relative paths resolve against `base_dir`.
  static DataSource from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  nlohmann::json to_json() const;
};

/// Schema documented in docs/experiment_config.md.
struct ExperimentConfig {
  std::string name;
  DataSource data;
  data::Scenario scenario = data::Scenario::Svs;
  ModelKind model = ModelKind::Xgb;
  Cooperation cooperation = Cooperation::Centralized;
  int folds = 5;
  std::uint64_t seed = 0;
  nlohmann::json grid = nlohmann::json::object();    // key -> list of values; empty means default
  nlohmann::json params = nlohmann::json::object();  // fixed values merged into every grid point
  unsigned key_bits = 2048;
  std::optional<std::string> active_party;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
};

/// A top-level "experiments" list expands into one config per entry; entries inherit the
/// remaining top-level keys.
std::vector<ExperimentConfig> parse_experiments(const nlohmann::json& j, const std::filesystem::path& base_dir);
std::vector<ExperimentConfig> load_experiments(const std::filesystem::path& path);

nlohmann::json default_grid(ModelKind m);
/// Cartesian product in key order, last key varying fastest; `fixed` entries are added to
/// every point and grid keys override them.
std::vector<nlohmann::json> expand_grid(const nlohmann::json& grid, const nlohmann::json& fixed);

/// All-zero columns dropped, groups restricted, cells binned, features partitioned.
struct PreparedData {
  data::BinnedDataset binned;
  data::FeatureGroups groups;
  data::FeaturePartition partition;
};

PreparedData prepare_data(const DataSource& src, data::Scenario scenario,
                          const std::optional<std::string>& active_party = std::nullopt);

struct FoldOutcome {
  metrics::Metrics metrics;
  double train_seconds = 0.0;
  double he_seconds = 0.0;  // encrypt + decrypt, FedTreeHE only
  double critical_path_seconds = 0.0;
  std::uint64_t bytes = 0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::vector<int> test_indices;

  nlohmann::json to_json() const;
};

/// Trains on `train`, evaluates on `test`. `party` restricts a centralized model to that
/// party's features (non-cooperative baseline).
FoldOutcome run_fold(const ExperimentConfig& cfg, const PreparedData& d, const nlohmann::json& params,
                     const std::vector<int>& train, const std::vector<int>& test, std::uint64_t seed,
                     std::optional<int> party = std::nullopt);

struct GridPointResult {
  nlohmann::json params;
  std::vector<FoldOutcome> folds;
  metrics::MeanStd accuracy;
  metrics::MeanStd macro_f1;
  metrics::MeanStd weighted_f1;
};

struct PartyReport {
  std::string party;
  GridPointResult winner;
};

struct MetricsReport {
  nlohmann::json config;
  std::string name;
  std::string scenario;
  std::string model;
  std::string cooperation;
  nlohmann::json winner_params;
  std::vector<GridPointResult> grid;  // every evaluated point (cooperative runs)
  std::vector<FoldOutcome> folds;     // the winner's folds (cooperative runs)
  std::vector<PartyReport> parties;   // per-owner winners (non-cooperative runs)
  metrics::MeanStd accuracy;
  metrics::MeanStd macro_f1;
  metrics::MeanStd weighted_f1;
  std::vector<metrics::ClassScores> per_class_mean;
  std::vector<std::vector<std::int64_t>> confusion;  // summed over folds
  double train_seconds = 0.0;
  double he_seconds = 0.0;
  std::uint64_t bytes = 0;

  nlohmann::json to_json() const;
};

using Progress = std::function<void(std::string_view)>;

/// Grid search over k-fold CV; the winner maximizes mean accuracy (first point wins ties).
MetricsReport run_experiment(const ExperimentConfig& cfg, const Progress& progress = {});
/// Local model per party on its own features; the reported mean and std run across owners.
MetricsReport run_non_cooperative(const ExperimentConfig& cfg, const Progress& progress = {});
/// Dispatches on cfg.cooperation.
MetricsReport run(const ExperimentConfig& cfg, const Progress& progress = {});

/// Worker count: VFLAB_THREADS if set, else the hardware concurrency.
int worker_threads();

// ---------------------------------------------------------------------------
// Training-time benchmark

struct BenchEntry {
  std::string name;
  data::Scenario scenario = data::Scenario::Svs;
  ModelKind model = ModelKind::Xgb;
  nlohmann::json params = nlohmann::json::object();
  std::optional<int> max_rows;  // overrides BenchConfig::max_rows
};

struct BenchConfig {
  DataSource data;
  std::vector<BenchEntry> entries;
  int repeats = 3;
  std::optional<int> max_rows;  // seeded subsample of the dataset
  unsigned key_bits = 2048;
  std::uint64_t seed = 0;

  static BenchConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
  static BenchConfig load(const std::filesystem::path& path);
};

struct BenchRow {
  std::string name;
  std::string scenario;
  std::string model;
  std::size_t rows = 0;
  double wall_seconds = 0.0;           // minimum over repeats
  double critical_path_seconds = 0.0;  // per step, the slowest party's CPU time, minimized over repeats; summed
  double he_seconds = 0.0;             // of the fastest repeat
  double he_share = 0.0;               // he_seconds / total party CPU time
  std::uint64_t bytes = 0;

  nlohmann::json to_json() const;
};

std::vector<BenchRow> benchmark_time(const BenchConfig& cfg, const Progress& progress = {});

// ---------------------------------------------------------------------------
// Report rendering

/// Accepts a single report, an array of reports, {"reports": [...]} and/or {"timing": [...]}.
std::string render_markdown(const nlohmann::json& doc);
std::string render_csv(const nlohmann::json& doc);

}  // namespace vflab::harness
