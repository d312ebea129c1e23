#include "vflab/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace vflab::data {

std::string_view class_name(int cls) {
  switch (cls) {
    case 0: return "IDU";
    case 1: return "ODU";
    case 2: return "Cable";
    case 3: return "Power";
    default: return "?";
  }
}

void AlarmDataset::validate() const {
  if (static_cast<Eigen::Index>(feature_names.size()) != raw.cols())
    throw ParseError(fmt::format("{} feature names for {} columns", feature_names.size(), raw.cols()));
  if (static_cast<Eigen::Index>(labels.size()) != raw.rows())
    throw ParseError(fmt::format("{} labels for {} rows", labels.size(), raw.rows()));
  std::set<std::string> seen;
  for (const auto& name : feature_names)
    if (!seen.insert(name).second) throw ParseError("duplicate feature name '" + name + "'");
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
      if (raw(i, j) < 0 || raw(i, j) > kWindowSeconds)
        throw ParseError(fmt::format("row {}, column '{}': value {} outside [0, {}]", i + 1,
                                     feature_names[j], raw(i, j), kWindowSeconds));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= kNumClasses)
      throw ParseError(fmt::format("row {}: label {} outside 1..{}", i + 1, labels[i] + 1, kNumClasses));
}

void BinnedDataset::validate() const {
  if (static_cast<Eigen::Index>(feature_names.size()) != cells.cols())
    throw ParseError("feature name count does not match columns");
  if (static_cast<Eigen::Index>(labels.size()) != cells.rows())
    throw ParseError("label count does not match rows");
  if (cells.size() > 0 && cells.maxCoeff() > 3) throw ParseError("binned cell outside {0,1,2,3}");
}

BinnedDataset BinnedDataset::select_rows(const std::vector<int>& rows) const {
  BinnedDataset out;
  out.feature_names = feature_names;
  out.cells.resize(static_cast<Eigen::Index>(rows.size()), cells.cols());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.cells.row(static_cast<Eigen::Index>(r)) = cells.row(rows[r]);
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

BinnedDataset BinnedDataset::select_features(const std::vector<int>& cols) const {
  BinnedDataset out;
  out.labels = labels;
  out.cells.resize(cells.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.cells.col(static_cast<Eigen::Index>(c)) = cells.col(cols[c]);
    out.feature_names.push_back(feature_names[cols[c]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

AlarmDataset parse_csv(std::istream& in, std::string_view source) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(fmt::format("{}: missing header row", source));
  std::vector<std::string> header;
  for (const auto field : split_commas(trim(line))) header.emplace_back(trim(field));
  int label_col = -1;
  AlarmDataset d;
  std::vector<int> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& name = header[c];
    if (name == "label") {
      if (label_col >= 0) throw ParseError(fmt::format("{}: duplicate label column", source));
      label_col = static_cast<int>(c);
    } else {
      feature_cols.push_back(static_cast<int>(c));
      d.feature_names.emplace_back(name);
    }
  }
  if (label_col < 0) throw ParseError(fmt::format("{}: missing 'label' column", source));

  std::vector<std::int32_t> cells;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = trim(line);
    if (trimmed.empty()) continue;
    ++row;
    auto fields = split_commas(trimmed);
    if (fields.size() != header.size())
      throw ParseError(fmt::format("{}:{}: expected {} fields, found {}", source, line_no,
                                   header.size(), fields.size()));
    auto parse_int = [&](std::size_t c) {
      const auto f = trim(fields[c]);
      int v = 0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty())
        throw ParseError(fmt::format("{}:{}: row {}, column '{}': non-integer value '{}'", source,
                                     line_no, row, header[c], f));
      return v;
    };
    for (int c : feature_cols) {
      const int v = parse_int(static_cast<std::size_t>(c));
      if (v < 0 || v > kWindowSeconds)
        throw ParseError(fmt::format("{}:{}: row {}, column '{}': value {} outside [0, {}]", source,
                                     line_no, row, header[c], v, kWindowSeconds));
      cells.push_back(v);
    }
    const int label = parse_int(static_cast<std::size_t>(label_col));
    if (label < 1 || label > kNumClasses)
      throw ParseError(fmt::format("{}:{}: row {}: label {} outside 1..{}", source, line_no, row,
                                   label, kNumClasses));
    d.labels.push_back(label - 1);
  }

  const auto n = static_cast<Eigen::Index>(row);
  const auto f = static_cast<Eigen::Index>(feature_cols.size());
  d.raw = Eigen::Map<Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      cells.data(), n, f);
  d.validate();
  return d;
}

AlarmDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(std::ostream& out, const AlarmDataset& d) {
  for (const auto& name : d.feature_names) out << name << ',';
  out << "label\n";
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.features(); ++j) out << d.raw(i, j) << ',';
    out << d.labels[static_cast<std::size_t>(i)] + 1 << '\n';
  }
}

void write_binned_csv(std::ostream& out, const BinnedDataset& d) {
  for (const auto& name : d.feature_names) out << name << ',';
  out << "label\n";
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.features(); ++j) out << int{d.cells(i, j)} << ',';
    out << d.labels[static_cast<std::size_t>(i)] + 1 << '\n';
  }
}

// ---------------------------------------------------------------------------
// Preprocessing

AlarmDataset drop_all_zero_features(const AlarmDataset& d) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < d.features(); ++j)
    if ((d.raw.col(j).array() != 0).any()) keep.push_back(j);

  AlarmDataset out;
  out.labels = d.labels;
  out.raw.resize(d.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    out.raw.col(static_cast<Eigen::Index>(c)) = d.raw.col(keep[c]);
    out.feature_names.push_back(d.feature_names[static_cast<std::size_t>(keep[c])]);
  }
  return out;
}

BinnedDataset bin_alarm_counts(const AlarmDataset& d) {
  BinnedDataset out;
  out.feature_names = d.feature_names;
  out.labels = d.labels;
  out.cells = d.raw.unaryExpr([](std::int32_t v) { return bin_seconds(v); });
  return out;
}

// ---------------------------------------------------------------------------
// Scenarios and partitions

Scenario parse_scenario(std::string_view s) {
  if (s == "SVS") return Scenario::Svs;
  if (s == "2VS" || s == "2-VS") return Scenario::TwoVendor;
  if (s == "3VS" || s == "3-VS") return Scenario::ThreeVendor;
  throw ConfigError(fmt::format("unknown scenario '{}' (expected SVS, 2VS or 3VS)", s));
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Svs: return "SVS";
    case Scenario::TwoVendor: return "2VS";
    case Scenario::ThreeVendor: return "3VS";
  }
  return "?";
}

FeatureGroups FeatureGroups::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("feature-group table must be a JSON object");
  FeatureGroups g;
  for (const auto& [name, members] : j.items()) {
    if (!members.is_array()) throw ParseError("group '" + name + "' must be an array of names");
    g.groups[name] = members.get<std::vector<std::string>>();
  }
  return g;
}

FeatureGroups FeatureGroups::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

nlohmann::json FeatureGroups::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, members] : groups) j[name] = members;
  return j;
}

FeatureGroups FeatureGroups::restricted_to(const std::vector<std::string>& keep) const {
  const std::set<std::string> keep_set(keep.begin(), keep.end());
  FeatureGroups out;
  for (const auto& [name, members] : groups) {
    auto& dst = out.groups[name];
    for (const auto& m : members)
      if (keep_set.count(m)) dst.push_back(m);
  }
  return out;
}

std::vector<int> FeaturePartition::features_of(int party) const {
  std::vector<int> out;
  for (std::size_t j = 0; j < assignment.size(); ++j)
    if (assignment[j] == party) out.push_back(static_cast<int>(j));
  return out;
}

void FeaturePartition::validate(std::size_t num_features) const {
  if (party_names.empty()) throw ConfigError("partition has no parties");
  if (assignment.size() != num_features) throw ConfigError("partition does not cover every feature");
  for (int p : assignment)
    if (p < 0 || p >= num_parties()) throw ConfigError("feature assigned to unknown party");
  if (active_party < 0 || active_party >= num_parties()) throw ConfigError("invalid active party");
}

FeaturePartition partition_features(const BinnedDataset& d, Scenario scenario,
                                    const FeatureGroups& groups,
                                    std::optional<std::string> active_party) {
  std::map<std::string, int> index;
  for (std::size_t j = 0; j < d.feature_names.size(); ++j)
    index[d.feature_names[j]] = static_cast<int>(j);

  std::vector<std::string> group_of(d.feature_names.size());
  for (const auto& [group, members] : groups.groups) {
    for (const auto& name : members) {
      auto it = index.find(name);
      if (it == index.end())
        throw ConfigError(fmt::format("group '{}' names unknown feature '{}'", group, name));
      auto& slot = group_of[static_cast<std::size_t>(it->second)];
      if (!slot.empty())
        throw ConfigError(fmt::format("feature '{}' is in both '{}' and '{}'", name, slot, group));
      slot = group;
    }
  }
  for (std::size_t j = 0; j < group_of.size(); ++j) {
    if (group_of[j].empty())
      throw ConfigError(fmt::format("feature '{}' belongs to no group", d.feature_names[j]));
    if (group_of[j] != "IDU" && group_of[j] != "ODU" && group_of[j] != "NOS")
      throw ConfigError(fmt::format("unknown group '{}' (expected IDU, ODU, NOS)", group_of[j]));
  }

  FeaturePartition p;
  std::map<std::string, int> party_of_group;
  switch (scenario) {
    case Scenario::Svs:
      p.party_names = {"SVS"};
      party_of_group = {{"IDU", 0}, {"ODU", 0}, {"NOS", 0}};
      p.active_party = 0;
      break;
    case Scenario::TwoVendor:
      p.party_names = {"ODU", "IDU+NOS"};
      party_of_group = {{"ODU", 0}, {"IDU", 1}, {"NOS", 1}};
      p.active_party = 1;
      break;
    case Scenario::ThreeVendor:
      p.party_names = {"IDU", "ODU", "NOS"};
      party_of_group = {{"IDU", 0}, {"ODU", 1}, {"NOS", 2}};
      p.active_party = 0;
      break;
  }
  if (active_party) {
    auto it = std::find(p.party_names.begin(), p.party_names.end(), *active_party);
    if (it == p.party_names.end())
      throw ConfigError(fmt::format("active party '{}' is not part of scenario {}", *active_party,
                                    to_string(scenario)));
    p.active_party = static_cast<int>(it - p.party_names.begin());
  }
  for (const auto& g : group_of) p.assignment.push_back(party_of_group.at(g));
  p.validate(d.feature_names.size());
  return p;
}

// ---------------------------------------------------------------------------
// Folds

std::vector<int> FoldPlan::train_indices(int fold) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] != fold) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> FoldPlan::test_indices(int fold) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < assignments.size(); ++i)
    if (assignments[i] == fold) out.push_back(static_cast<int>(i));
  return out;
}

FoldPlan stratified_kfold(const Labels& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  std::map<int, std::vector<int>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<int>(i));
  for (const auto& [cls, idx] : members)
    if (static_cast<int>(idx.size()) < k)
      throw ConfigError(fmt::format("class {} has {} members, fewer than k={}", cls + 1, idx.size(), k));

  // Shuffle within each class, then deal the class-ordered sequence round-robin.
  // Each class occupies a contiguous run, so per-class and per-fold counts both differ by <= 1.
  std::mt19937_64 rng(seed);
  FoldPlan plan{k, std::vector<int>(labels.size(), -1), seed};
  std::size_t pos = 0;
  for (auto& [cls, idx] : members) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i : idx) plan.assignments[static_cast<std::size_t>(i)] = static_cast<int>(pos++ % k);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Generator

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  try {
    s.n_obs = j.at("n_obs").get<int>();
    for (const auto& g : j.at("groups")) s.groups.emplace_back(g.at("name").get<std::string>(), g.at("features").get<int>());
    s.zero_features = j.value("zero_features", 0);
    s.class_priors = j.at("class_priors").get<std::vector<double>>();
    if (j.contains("background")) {
      const auto& b = j.at("background");
      s.background_probability = b.value("probability", 0.0);
      const auto dur = b.value("seconds", std::vector<int>{1, kWindowSeconds});
      s.background_min_seconds = dur.at(0);
      s.background_max_seconds = dur.at(1);
    }
    s.group_dropout = j.value("group_dropout", 0.0);
    for (const auto& sig : j.at("signatures")) {
      ClassSignature cs;
      cs.cls = sig.at("class").get<int>() - 1;
      for (const auto& a : sig.at("alarms")) {
        SignatureAlarm alarm;
        alarm.feature = a.at("feature").get<std::string>();
        alarm.probability = a.value("probability", 1.0);
        const auto dur = a.value("seconds", std::vector<int>{1, kWindowSeconds});
        alarm.min_seconds = dur.at(0);
        alarm.max_seconds = dur.at(1);
        cs.alarms.push_back(alarm);
      }
      s.signatures.push_back(std::move(cs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("generator spec: ") + e.what());
  }

  if (s.n_obs < 0) throw ConfigError("n_obs must be >= 0");
  if (s.class_priors.size() != static_cast<std::size_t>(kNumClasses))
    throw ConfigError(fmt::format("class_priors must have {} entries", kNumClasses));
  for (double p : s.class_priors)
    if (!(p >= 0)) throw ConfigError("class priors must be non-negative");
  if (std::accumulate(s.class_priors.begin(), s.class_priors.end(), 0.0) <= 0)
    throw ConfigError("class priors sum to zero");
  if (s.group_dropout < 0 || s.group_dropout > 1) throw ConfigError("group_dropout must be in [0,1]");

  const auto names = s.feature_names();
  std::map<std::string, std::string> group_of;
  for (const auto& [g, members] : s.feature_groups().groups)
    for (const auto& m : members) group_of[m] = g;
  for (const auto& sig : s.signatures) {
    if (sig.cls < 0 || sig.cls >= kNumClasses) throw ConfigError("signature class outside 1..4");
    std::set<std::string> spanned;
    for (const auto& a : sig.alarms) {
      auto it = group_of.find(a.feature);
      if (it == group_of.end())
        throw ConfigError(fmt::format("signature for class {} references unknown feature '{}'",
                                      sig.cls + 1, a.feature));
      if (a.min_seconds < 1 || a.max_seconds > kWindowSeconds || a.min_seconds > a.max_seconds)
        throw ConfigError(fmt::format("bad duration range for '{}'", a.feature));
      spanned.insert(it->second);
    }
    if (spanned.size() < 2)
      throw ConfigError(fmt::format("signature for class {} must span at least two groups", sig.cls + 1));
  }
  return s;
}

GeneratorSpec GeneratorSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> GeneratorSpec::feature_names() const {
  std::vector<std::string> names;
  int total = zero_features;
  for (const auto& [g, n] : groups) total += n;
  for (int i = 1; i <= total; ++i) names.push_back(fmt::format("A_{}", i));
  return names;
}

FeatureGroups GeneratorSpec::feature_groups() const {
  FeatureGroups out;
  int next = 1;
  for (const auto& [g, n] : groups) {
    auto& members = out.groups[g];
    for (int i = 0; i < n; ++i) members.push_back(fmt::format("A_{}", next++));
  }
  return out;
}

AlarmDataset generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed) {
  AlarmDataset d;
  d.feature_names = spec.feature_names();
  const auto n_feat = static_cast<Eigen::Index>(d.feature_names.size());
  const int n_grouped = static_cast<int>(n_feat) - spec.zero_features;
  d.raw = RawMatrix::Zero(spec.n_obs, n_feat);

  // Exact class counts by largest remainder, then a seeded shuffle.
  const double total = std::accumulate(spec.class_priors.begin(), spec.class_priors.end(), 0.0);
  std::vector<int> counts(kNumClasses);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double exact = spec.n_obs * spec.class_priors[c] / total;
    counts[c] = static_cast<int>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - counts[c], c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; assigned < spec.n_obs; ++i, ++assigned) ++counts[remainders[i % kNumClasses].second];
  for (int c = 0; c < kNumClasses; ++c) d.labels.insert(d.labels.end(), counts[c], c);

  std::mt19937_64 rng(seed);
  std::shuffle(d.labels.begin(), d.labels.end(), rng);

  std::map<std::string, int> column;
  for (std::size_t j = 0; j < d.feature_names.size(); ++j) column[d.feature_names[j]] = static_cast<int>(j);
  std::map<std::string, int> group_index;
  std::vector<int> group_of_column(static_cast<std::size_t>(n_feat), -1);
  {
    int col = 0;
    for (std::size_t g = 0; g < spec.groups.size(); ++g)
      for (int i = 0; i < spec.groups[g].second; ++i) group_of_column[static_cast<std::size_t>(col++)] = static_cast<int>(g);
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto duration = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  for (int i = 0; i < spec.n_obs; ++i) {
    for (int j = 0; j < n_grouped; ++j)
      if (unit(rng) < spec.background_probability)
        d.raw(i, j) = duration(spec.background_min_seconds, spec.background_max_seconds);

    std::vector<bool> silent(spec.groups.size());
    for (std::size_t g = 0; g < spec.groups.size(); ++g) silent[g] = unit(rng) < spec.group_dropout;

    const int cls = d.labels[static_cast<std::size_t>(i)];
    for (const auto& sig : spec.signatures) {
      if (sig.cls != cls) continue;
      for (const auto& a : sig.alarms) {
        const int j = column.at(a.feature);
        const bool fires = unit(rng) < a.probability;
        const int secs = duration(a.min_seconds, a.max_seconds);
        if (fires && !silent[static_cast<std::size_t>(group_of_column[static_cast<std::size_t>(j)])])
          d.raw(i, j) = std::max(d.raw(i, j), secs);
      }
    }
  }
  d.validate();
  return d;
}

}  // namespace vflab::data
