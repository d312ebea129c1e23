#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"

namespace vflab::data {

/// Failure causes, stored 0-based. CSV labels are 1..4 in this order.
enum class FailureClass : std::uint8_t { Idu = 0, Odu = 1, Cable = 2, Power = 3 };

std::string_view class_name(int cls);

/// Seconds an alarm was active inside one 15-minute window.
inline constexpr int kWindowSeconds = 900;

using RawMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;
using BinMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct AlarmDataset {
  std::vector<std::string> feature_names;
  RawMatrix raw;  // observations x features, seconds active
  Labels labels;

  Eigen::Index rows() const { return raw.rows(); }
  Eigen::Index features() const { return raw.cols(); }

  /// Throws ParseError naming the first violated invariant.
  void validate() const;
};

/// Categorical alarm levels: 0 off, 1 short, 2 medium, 3 long.
struct BinnedDataset {
  std::vector<std::string> feature_names;
  BinMatrix cells;
  Labels labels;

  Eigen::Index rows() const { return cells.rows(); }
  Eigen::Index features() const { return cells.cols(); }

  void validate() const;
  BinnedDataset select_rows(const std::vector<int>& rows) const;
  BinnedDataset select_features(const std::vector<int>& cols) const;
};

AlarmDataset parse_csv(std::istream& in, std::string_view source = "<stream>");
AlarmDataset load_csv(const std::filesystem::path& path);
void write_csv(std::ostream& out, const AlarmDataset& d);
void write_binned_csv(std::ostream& out, const BinnedDataset& d);

AlarmDataset drop_all_zero_features(const AlarmDataset& d);

/// 0 -> 0, [1,45] -> 1, (45,450] -> 2, (450,900] -> 3.
constexpr std::uint8_t bin_seconds(int seconds) {
  if (seconds <= 0) return 0;
  if (seconds <= 45) return 1;
  if (seconds <= 450) return 2;
  return 3;
}

BinnedDataset bin_alarm_counts(const AlarmDataset& d);

// ---------------------------------------------------------------------------
// Vendor scenarios

enum class Scenario { Svs, TwoVendor, ThreeVendor };

Scenario parse_scenario(std::string_view s);
std::string_view to_string(Scenario s);

/// Named alarm groups (IDU, ODU, NOS) listing feature names.
struct FeatureGroups {
  std::map<std::string, std::vector<std::string>> groups;

  static FeatureGroups from_json(const nlohmann::json& j);
  static FeatureGroups load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Removes names not present in `keep`; used after dropping all-zero columns.
  FeatureGroups restricted_to(const std::vector<std::string>& keep) const;
};

struct FeaturePartition {
  std::vector<std::string> party_names;
  std::vector<int> assignment;  // feature index -> party index
  int active_party = 0;

  int num_parties() const { return static_cast<int>(party_names.size()); }
  std::vector<int> features_of(int party) const;
  void validate(std::size_t num_features) const;
};

/// Default label holder: 2-VS -> IDU+NOS vendor, 3-VS -> IDU vendor.
FeaturePartition partition_features(const BinnedDataset& d, Scenario scenario,
                                    const FeatureGroups& groups,
                                    std::optional<std::string> active_party = std::nullopt);

// ---------------------------------------------------------------------------
// Cross-validation folds

struct FoldPlan {
  int k = 0;
  std::vector<int> assignments;  // observation -> fold id
  std::uint64_t seed = 0;

  std::vector<int> train_indices(int fold) const;
  std::vector<int> test_indices(int fold) const;
};

FoldPlan stratified_kfold(const Labels& labels, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic generator

struct SignatureAlarm {
  std::string feature;
  double probability = 1.0;
  int min_seconds = 1;
  int max_seconds = kWindowSeconds;
};

struct ClassSignature {
  int cls = 0;  // 0-based
  std::vector<SignatureAlarm> alarms;
};

/// Schema documented in docs/generator_spec.md.
struct GeneratorSpec {
  int n_obs = 0;
  std::vector<std::pair<std::string, int>> groups;  // ordered (name, feature count)
  int zero_features = 0;
  std::vector<double> class_priors;
  double background_probability = 0.0;
  int background_min_seconds = 1;
  int background_max_seconds = kWindowSeconds;
  /// Probability that a group's signature alarms are all silent in one observation.
  double group_dropout = 0.0;
  std::vector<ClassSignature> signatures;

  static GeneratorSpec from_json(const nlohmann::json& j);
  static GeneratorSpec load(const std::filesystem::path& path);

  std::vector<std::string> feature_names() const;
  /// Group membership of the generated features (zero features are ungrouped).
  FeatureGroups feature_groups() const;
};

AlarmDataset generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed);

}  // namespace vflab::data
