#include "vflab/harness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "vflab/fedtree.hpp"
#include "vflab/gbdt.hpp"
#include "vflab/nn.hpp"
#include "vflab/splitnn.hpp"

namespace vflab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

ModelKind parse_model(std::string_view s) {
  if (s == "xgb") return ModelKind::Xgb;
  if (s == "nn") return ModelKind::Nn;
  if (s == "fedtree") return ModelKind::FedTree;
  if (s == "fedtree-he") return ModelKind::FedTreeHe;
  if (s == "splitnn") return ModelKind::SplitNn;
  throw ConfigError(fmt::format("unknown model '{}' (expected xgb, nn, fedtree, fedtree-he, splitnn)", s));
}

std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::Xgb: return "xgb";
    case ModelKind::Nn: return "nn";
    case ModelKind::FedTree: return "fedtree";
    case ModelKind::FedTreeHe: return "fedtree-he";
    case ModelKind::SplitNn: return "splitnn";
  }
  return "?";
}

Cooperation parse_cooperation(std::string_view s) {
  if (s == "federated") return Cooperation::Federated;
  if (s == "centralized") return Cooperation::Centralized;
  if (s == "non-cooperative") return Cooperation::NonCooperative;
  throw ConfigError(fmt::format("unknown cooperation '{}' (expected federated, centralized, non-cooperative)", s));
}

std::string_view to_string(Cooperation c) {
  switch (c) {
    case Cooperation::Federated: return "federated";
    case Cooperation::Centralized: return "centralized";
    case Cooperation::NonCooperative: return "non-cooperative";
  }
  return "?";
}

namespace {

bool is_tree(ModelKind m) { return m == ModelKind::Xgb || m == ModelKind::FedTree || m == ModelKind::FedTreeHe; }
bool is_federated_model(ModelKind m) { return m == ModelKind::FedTree || m == ModelKind::FedTreeHe || m == ModelKind::SplitNn; }

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

const std::set<std::string>& allowed_keys(ModelKind m) {
  static const std::set<std::string> tree{"n_trees", "max_depth", "learning_rate", "lambda", "gamma", "min_child"};
  static const std::set<std::string> nn{"hidden_layers", "width", "learning_rate", "epochs", "batch_size",
                                        "activation", "init"};
  static const std::set<std::string> split{"hidden_layers", "width",  "learning_rate",        "epochs",
                                           "batch_size",    "activation", "init",             "merge",
                                           "bottom_hidden_layers", "bottom_width", "bottom_output"};
  if (is_tree(m)) return tree;
  return m == ModelKind::SplitNn ? split : nn;
}

void check_keys(ModelKind m, const json& obj, std::string_view what) {
  const auto& ok = allowed_keys(m);
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ConfigError(fmt::format("{} key '{}' is not valid for model {}", what, k, to_string(m)));
}

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

int worker_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("VFLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return hw;
}

// ---------------------------------------------------------------------------
// Configuration

DataSource DataSource::from_json(const json& j, const fs::path& base_dir) {
  DataSource d;
  if (j.contains("csv")) {
    d.csv = resolve(base_dir, j.at("csv").get<std::string>());
    if (!j.contains("groups")) throw ConfigError("dataset.csv requires dataset.groups (feature-group table)");
    d.groups = resolve(base_dir, j.at("groups").get<std::string>());
  } else if (j.contains("generator")) {
    const auto& g = j.at("generator");
    if (g.is_string()) {
      d.generator_path = resolve(base_dir, g.get<std::string>());
      d.generator = read_json_file(*d.generator_path);
    } else {
      d.generator = g;
    }
    d.generator_seed = j.value("seed", std::uint64_t{0});
  } else {
    throw ConfigError("dataset needs either 'csv' + 'groups' or 'generator'");
  }
  return d;
}

json DataSource::to_json() const {
  if (csv) return {{"csv", csv->string()}, {"groups", groups ? groups->string() : ""}};
  json j{{"seed", generator_seed}};
  if (generator_path)
    j["generator"] = generator_path->string();
  else
    j["generator"] = generator ? *generator : json();
  return j;
}

void ExperimentConfig::validate() const {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (scenario == data::Scenario::Svs && cooperation != Cooperation::Centralized)
    throw ConfigError("scenario SVS requires cooperation 'centralized'");
  switch (cooperation) {
    case Cooperation::Federated:
      if (!is_federated_model(model))
        throw ConfigError(fmt::format("federated runs need fedtree, fedtree-he or splitnn, not {}", to_string(model)));
      break;
    case Cooperation::Centralized:
    case Cooperation::NonCooperative:
      if (model != ModelKind::Xgb && model != ModelKind::Nn)
        throw ConfigError(fmt::format("{} runs need xgb or nn, not {}", to_string(cooperation), to_string(model)));
      break;
  }
  if (model == ModelKind::FedTreeHe && key_bits != 512 && key_bits != 1024 && key_bits != 2048)
    throw ConfigError(fmt::format("unsupported key size {}", key_bits));
  if (!grid.is_object()) throw ConfigError("grid must be an object of value lists");
  for (const auto& [k, v] : grid.items())
    if (!v.is_array() || v.empty()) throw ConfigError(fmt::format("grid entry '{}' must be a non-empty list", k));
  if (!params.is_object()) throw ConfigError("params must be an object");
  check_keys(model, grid, "grid");
  check_keys(model, params, "params");
}

json ExperimentConfig::to_json() const {
  json j{{"name", name},
         {"dataset", data.to_json()},
         {"scenario", data::to_string(scenario)},
         {"model", to_string(model)},
         {"cooperation", to_string(cooperation)},
         {"folds", folds},
         {"seed", seed},
         {"grid", grid},
         {"params", params},
         {"key_bits", key_bits}};
  if (active_party) j["active_party"] = *active_party;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    ExperimentConfig c;
    c.name = j.value("name", std::string());
    c.data = DataSource::from_json(j.at("dataset"), base_dir);
    c.scenario = data::parse_scenario(j.at("scenario").get<std::string>());
    c.model = parse_model(j.at("model").get<std::string>());
    c.cooperation = parse_cooperation(j.value("cooperation", c.scenario == data::Scenario::Svs ? "centralized" : "federated"));
    c.folds = j.value("folds", 5);
    c.seed = j.value("seed", std::uint64_t{0});
    c.grid = j.value("grid", json::object());
    if (c.grid.empty()) c.grid = default_grid(c.model);
    c.params = j.value("params", json::object());
    c.key_bits = j.value("key_bits", 2048u);
    if (j.contains("active_party")) c.active_party = j.at("active_party").get<std::string>();
    if (c.name.empty())
      c.name = fmt::format("{}-{}-{}", data::to_string(c.scenario), to_string(c.model), to_string(c.cooperation));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid experiment config: {}", e.what()));
  }
}

std::vector<ExperimentConfig> parse_experiments(const json& j, const fs::path& base_dir) {
  std::vector<ExperimentConfig> out;
  if (!j.contains("experiments")) {
    out.push_back(ExperimentConfig::from_json(j, base_dir));
    return out;
  }
  json base = j;
  base.erase("experiments");
  for (const auto& e : j.at("experiments")) {
    json merged = base;
    merged.update(e);
    out.push_back(ExperimentConfig::from_json(merged, base_dir));
  }
  return out;
}

std::vector<ExperimentConfig> load_experiments(const fs::path& path) {
  return parse_experiments(read_json_file(path), path.parent_path());
}

json default_grid(ModelKind m) {
  if (is_tree(m)) return {{"n_trees", {10, 20, 40}}, {"max_depth", {4, 5, 6}}};
  return {{"hidden_layers", {1, 2}},  {"width", {64, 128}},    {"learning_rate", {0.001, 0.002}},
          {"epochs", {25, 50}},       {"batch_size", {32, 64}}, {"activation", {"tanh", "relu"}}};
}

std::vector<json> expand_grid(const json& grid, const json& fixed) {
  std::vector<json> points{fixed.is_object() ? fixed : json::object()};
  for (const auto& [key, values] : grid.items()) {
    std::vector<json> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        json q = p;
        q[key] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Data

PreparedData prepare_data(const DataSource& src, data::Scenario scenario, const std::optional<std::string>& active_party) {
  data::AlarmDataset raw;
  data::FeatureGroups groups;
  if (src.csv) {
    raw = data::load_csv(*src.csv);
    groups = data::FeatureGroups::load(*src.groups);
  } else {
    const auto spec = data::GeneratorSpec::from_json(*src.generator);
    raw = data::generate_synthetic(spec, src.generator_seed);
    groups = spec.feature_groups();
  }
  raw = data::drop_all_zero_features(raw);
  PreparedData d;
  d.groups = groups.restricted_to(raw.feature_names);
  d.binned = data::bin_alarm_counts(raw);
  d.partition = data::partition_features(d.binned, scenario, d.groups, active_party);
  return d;
}

// ---------------------------------------------------------------------------
// Training one model

namespace {

struct NnParams {
  int hidden_layers = 1;
  int width = 64;
  double learning_rate = 0.001;
  int epochs = 25;
  int batch_size = 32;
  nn::Activation activation = nn::Activation::Tanh;
  nn::Init init = nn::Init::GlorotUniform;
  splitnn::MergeOp merge = splitnn::MergeOp::Concat;
  splitnn::BottomDefaults bottom;

  static NnParams from_json(const json& j) {
    NnParams p;
    p.hidden_layers = j.value("hidden_layers", p.hidden_layers);
    p.width = j.value("width", p.width);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.epochs = j.value("epochs", p.epochs);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.activation = nn::parse_activation(j.value("activation", std::string("tanh")));
    p.init = j.contains("init") ? nn::parse_init(j.at("init").get<std::string>())
                                : (p.activation == nn::Activation::Relu ? nn::Init::HeNormal : nn::Init::GlorotUniform);
    p.merge = splitnn::parse_merge(j.value("merge", std::string("concat")));
    p.bottom.hidden_layers = j.value("bottom_hidden_layers", p.bottom.hidden_layers);
    p.bottom.hidden_width = j.value("bottom_width", p.bottom.hidden_width);
    p.bottom.output_width = j.value("bottom_output", p.bottom.output_width);
    p.bottom.activation = p.activation;
    return p;
  }

  nn::TrainConfig train(std::uint64_t seed) const {
    nn::TrainConfig c;
    c.learning_rate = learning_rate;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.seed = seed;
    return c;
  }
};

data::BinMatrix take(const data::BinMatrix& m, const std::vector<int>& rows, const std::vector<int>& cols) {
  data::BinMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

Labels take_labels(const Labels& y, const std::vector<int>& rows) {
  Labels out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(y[static_cast<std::size_t>(r)]);
  return out;
}

std::vector<int> all_columns(const PreparedData& d) {
  std::vector<int> c(static_cast<std::size_t>(d.binned.features()));
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = static_cast<int>(j);
  return c;
}

struct TrainStats {
  double wall = 0.0;
  double critical_path = 0.0;
  std::vector<double> steps;  // slowest actor per protocol step; empty for centralized runs
  double he = 0.0;
  double busy = 0.0;
  std::uint64_t bytes = 0;
};

struct Trained {
  std::function<Labels(const std::vector<int>& rows)> predict;
  TrainStats stats;
};

Trained train_model(ModelKind model, const PreparedData& d, const json& params, const std::vector<int>& rows,
                    std::uint64_t seed, unsigned key_bits, std::optional<int> party) {
  const auto y = take_labels(d.binned.labels, rows);
  const auto t0 = std::chrono::steady_clock::now();
  const double c0 = thread_cpu_seconds();
  Trained out;
  auto finish_central = [&] {
    out.stats.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.stats.critical_path = out.stats.busy = thread_cpu_seconds() - c0;
  };

  switch (model) {
    case ModelKind::Xgb: {
      const auto cols = party ? d.partition.features_of(*party) : all_columns(d);
      auto m = std::make_shared<gbdt::GbdtModel>(gbdt::fit(take(d.binned.cells, rows, cols), y, gbdt::Params::from_json(params)));
      finish_central();
      out.predict = [m, cols, &d](const std::vector<int>& r) { return m->predict(take(d.binned.cells, r, cols)); };
      break;
    }
    case ModelKind::Nn: {
      const auto cols = party ? d.partition.features_of(*party) : all_columns(d);
      const auto p = NnParams::from_json(params);
      const auto spec = nn::MlpSpec::classifier(static_cast<int>(cols.size()), p.hidden_layers, p.width, kNumClasses,
                                                p.activation, p.init, mix_seed(seed, 1));
      auto m = std::make_shared<nn::Mlp>(
          nn::train_centralized(spec, take(d.binned.cells, rows, cols).cast<double>(), y, p.train(seed)).model);
      finish_central();
      out.predict = [m, cols, &d](const std::vector<int>& r) {
        return nn::predict(*m, take(d.binned.cells, r, cols).cast<double>());
      };
      break;
    }
    case ModelKind::FedTree:
    case ModelKind::FedTreeHe: {
      fedtree::Config cfg;
      cfg.params = gbdt::Params::from_json(params);
      cfg.active_party = d.partition.active_party;
      if (model == ModelKind::FedTreeHe) {
        cfg.mode = fedtree::Mode::Paillier;
        cfg.key_bits = key_bits;
        cfg.key_seed = mix_seed(seed, 0x6b6579);
        cfg.encrypt_seed = mix_seed(seed, 0x656e63);
      }
      std::vector<data::BinMatrix> slices;
      for (int p = 0; p < d.partition.num_parties(); ++p) {
        cfg.feature_ids.push_back(d.partition.features_of(p));
        slices.push_back(take(d.binned.cells, rows, cfg.feature_ids.back()));
      }
      fed::RunOptions opt;
      opt.keep_payloads = false;
      auto r = fedtree::train_fedtree(slices, y, cfg, opt);
      out.stats.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.stats.critical_path = r.transcript.critical_path_seconds;
      out.stats.steps = r.transcript.step_seconds;
      out.stats.he = r.transcript.encrypt_seconds() + r.transcript.decrypt_seconds();
      out.stats.busy = r.transcript.busy_seconds();
      out.stats.bytes = r.transcript.total_bytes;
      auto m = std::make_shared<fedtree::FederatedModel>(std::move(r.model));
      auto ids = cfg.feature_ids;
      out.predict = [m, ids, &d](const std::vector<int>& rr) {
        std::vector<data::BinMatrix> s;
        for (const auto& c : ids) s.push_back(take(d.binned.cells, rr, c));
        return fedtree::predict_federated(*m, s);
      };
      break;
    }
    case ModelKind::SplitNn: {
      const auto p = NnParams::from_json(params);
      std::vector<std::vector<int>> ids;
      std::vector<Eigen::MatrixXd> clients;
      std::vector<int> widths;
      for (int q = 0; q < d.partition.num_parties(); ++q) {
        ids.push_back(d.partition.features_of(q));
        clients.push_back(take(d.binned.cells, rows, ids.back()).cast<double>());
        widths.push_back(static_cast<int>(ids.back().size()));
      }
      const auto topo = splitnn::make_topology(widths, p.bottom, p.merge, p.hidden_layers, p.width, p.activation,
                                               p.init, p.train(seed));
      fed::RunOptions opt;
      opt.keep_payloads = false;
      auto r = splitnn::train_splitnn(clients, y, topo, opt);
      out.stats.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.stats.critical_path = r.transcript.critical_path_seconds;
      out.stats.steps = r.transcript.step_seconds;
      out.stats.busy = r.transcript.busy_seconds();
      out.stats.bytes = r.transcript.total_bytes;
      auto m = std::make_shared<splitnn::SplitNnModel>(std::move(r.model));
      out.predict = [m, ids, &d](const std::vector<int>& rr) {
        std::vector<Eigen::MatrixXd> s;
        for (const auto& c : ids) s.push_back(take(d.binned.cells, rr, c).cast<double>());
        return splitnn::predict_splitnn(*m, s);
      };
      break;
    }
  }
  return out;
}

}  // namespace

json FoldOutcome::to_json() const {
  return {{"metrics", metrics.to_json()},     {"train_seconds", train_seconds},
          {"he_seconds", he_seconds},         {"critical_path_seconds", critical_path_seconds},
          {"bytes", bytes},                   {"train_rows", train_rows},
          {"test_rows", test_rows}};
}

FoldOutcome run_fold(const ExperimentConfig& cfg, const PreparedData& d, const json& params,
                     const std::vector<int>& train, const std::vector<int>& test, std::uint64_t seed,
                     std::optional<int> party) {
  {
    const std::set<int> tr(train.begin(), train.end());
    for (int i : test)
      if (tr.count(i)) throw Error(fmt::format("fold leak: test row {} is also a training row", i));
  }
  const auto trained = train_model(cfg.model, d, params, train, seed, cfg.key_bits, party);
  FoldOutcome f;
  const auto pred = trained.predict(test);
  f.metrics = metrics::compute_metrics(take_labels(d.binned.labels, test), pred);
  f.train_seconds = trained.stats.wall;
  f.he_seconds = trained.stats.he;
  f.critical_path_seconds = trained.stats.critical_path;
  f.bytes = trained.stats.bytes;
  f.train_rows = train.size();
  f.test_rows = test.size();
  f.test_indices = test;
  return f;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

void summarize(GridPointResult& g) {
  std::vector<double> acc, f1, wf1;
  for (const auto& f : g.folds) {
    acc.push_back(f.metrics.accuracy);
    f1.push_back(f.metrics.macro_f1);
    wf1.push_back(f.metrics.weighted_f1);
  }
  g.accuracy = metrics::mean_std(acc);
  g.macro_f1 = metrics::mean_std(f1);
  g.weighted_f1 = metrics::mean_std(wf1);
}

/// Runs every (grid point, fold) task, in parallel when allowed; results are index-stable.
std::vector<GridPointResult> grid_search(const ExperimentConfig& cfg, const PreparedData& d,
                                         const data::FoldPlan& plan, std::optional<int> party,
                                         const Progress& progress) {
  const auto points = expand_grid(cfg.grid, cfg.params);
  std::vector<GridPointResult> out(points.size());
  for (std::size_t g = 0; g < points.size(); ++g) {
    out[g].params = points[g];
    out[g].folds.resize(static_cast<std::size_t>(plan.k));
  }
  const std::size_t tasks = points.size() * static_cast<std::size_t>(plan.k);
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  parallel_for(tasks, [&](std::size_t t) {
    const auto g = t / static_cast<std::size_t>(plan.k);
    const int fold = static_cast<int>(t % static_cast<std::size_t>(plan.k));
    std::uint64_t seed = mix_seed(cfg.seed, g + 1, static_cast<std::uint64_t>(fold) + 1);
    if (party) seed = mix_seed(seed, static_cast<std::uint64_t>(*party) + 1);
    out[g].folds[static_cast<std::size_t>(fold)] =
        run_fold(cfg, d, points[g], plan.train_indices(fold), plan.test_indices(fold), seed, party);
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(fmt::format("{}{}: {}/{} fold runs", cfg.name,
                           party ? fmt::format(" [{}]", d.partition.party_names[static_cast<std::size_t>(*party)]) : "",
                           ++done, tasks));
    }
  });
  for (auto& g : out) summarize(g);
  return out;
}

std::size_t pick_winner(const std::vector<GridPointResult>& grid) {
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (grid[g].accuracy.mean > grid[best].accuracy.mean) best = g;
  return best;
}

void fill_common(MetricsReport& r, const ExperimentConfig& cfg) {
  r.config = cfg.to_json();
  r.name = cfg.name;
  r.scenario = data::to_string(cfg.scenario);
  r.model = to_string(cfg.model);
  r.cooperation = to_string(cfg.cooperation);
}

/// Per-class means and summed confusion over a set of folds.
void aggregate_folds(MetricsReport& r, const std::vector<const FoldOutcome*>& folds) {
  r.per_class_mean.assign(static_cast<std::size_t>(kNumClasses), {});
  r.confusion.assign(static_cast<std::size_t>(kNumClasses), std::vector<std::int64_t>(static_cast<std::size_t>(kNumClasses), 0));
  for (const auto* f : folds) {
    for (std::size_t c = 0; c < r.per_class_mean.size(); ++c) {
      auto& dst = r.per_class_mean[c];
      const auto& src = f->metrics.per_class[c];
      dst.precision += src.precision / static_cast<double>(folds.size());
      dst.recall += src.recall / static_cast<double>(folds.size());
      dst.f1 += src.f1 / static_cast<double>(folds.size());
      dst.support += src.support;
      for (std::size_t p = 0; p < r.confusion.size(); ++p) r.confusion[c][p] += f->metrics.confusion[c][p];
    }
    r.train_seconds += f->train_seconds;
    r.he_seconds += f->he_seconds;
    r.bytes += f->bytes;
  }
}

json grid_json(const GridPointResult& g) {
  return {{"params", g.params},
          {"accuracy", metrics::to_json(g.accuracy)},
          {"macro_f1", metrics::to_json(g.macro_f1)},
          {"weighted_f1", metrics::to_json(g.weighted_f1)}};
}

}  // namespace

MetricsReport run_experiment(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  if (cfg.cooperation == Cooperation::NonCooperative) return run_non_cooperative(cfg, progress);
  const auto d = prepare_data(cfg.data, cfg.scenario, cfg.active_party);
  const auto plan = data::stratified_kfold(d.binned.labels, cfg.folds, mix_seed(cfg.seed, 0xf01d));
  MetricsReport r;
  fill_common(r, cfg);
  r.grid = grid_search(cfg, d, plan, std::nullopt, progress);
  const auto& win = r.grid[pick_winner(r.grid)];
  r.winner_params = win.params;
  r.folds = win.folds;
  r.accuracy = win.accuracy;
  r.macro_f1 = win.macro_f1;
  r.weighted_f1 = win.weighted_f1;
  std::vector<const FoldOutcome*> fs;
  for (const auto& f : r.folds) fs.push_back(&f);
  aggregate_folds(r, fs);
  return r;
}

MetricsReport run_non_cooperative(const ExperimentConfig& cfg, const Progress& progress) {
  cfg.validate();
  if (cfg.cooperation != Cooperation::NonCooperative) throw ConfigError("run_non_cooperative needs cooperation 'non-cooperative'");
  if (cfg.scenario == data::Scenario::Svs) throw ConfigError("non-cooperative runs need scenario 2VS or 3VS");
  const auto d = prepare_data(cfg.data, cfg.scenario, cfg.active_party);
  const auto plan = data::stratified_kfold(d.binned.labels, cfg.folds, mix_seed(cfg.seed, 0xf01d));
  MetricsReport r;
  fill_common(r, cfg);
  std::vector<double> acc, f1, wf1;
  std::vector<const FoldOutcome*> fs;
  for (int p = 0; p < d.partition.num_parties(); ++p) {
    auto grid = grid_search(cfg, d, plan, p, progress);
    PartyReport pr{d.partition.party_names[static_cast<std::size_t>(p)], std::move(grid[pick_winner(grid)])};
    acc.push_back(pr.winner.accuracy.mean);
    f1.push_back(pr.winner.macro_f1.mean);
    wf1.push_back(pr.winner.weighted_f1.mean);
    r.parties.push_back(std::move(pr));
  }
  for (const auto& pr : r.parties)
    for (const auto& f : pr.winner.folds) fs.push_back(&f);
  r.accuracy = metrics::mean_std(acc);
  r.macro_f1 = metrics::mean_std(f1);
  r.weighted_f1 = metrics::mean_std(wf1);
  aggregate_folds(r, fs);
  return r;
}

MetricsReport run(const ExperimentConfig& cfg, const Progress& progress) {
  return cfg.cooperation == Cooperation::NonCooperative ? run_non_cooperative(cfg, progress)
                                                        : run_experiment(cfg, progress);
}

json MetricsReport::to_json() const {
  json pc = json::array();
  for (const auto& s : per_class_mean)
    pc.push_back({{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}});
  json fj = json::array();
  for (const auto& f : folds) fj.push_back(f.to_json());
  json gj = json::array();
  for (const auto& g : grid) gj.push_back(grid_json(g));
  json pj = json::array();
  for (const auto& p : parties) {
    json folds_j = json::array();
    for (const auto& f : p.winner.folds) folds_j.push_back(f.to_json());
    auto e = grid_json(p.winner);
    e["party"] = p.party;
    e["folds"] = folds_j;
    pj.push_back(std::move(e));
  }
  return {{"name", name},
          {"scenario", scenario},
          {"model", model},
          {"cooperation", cooperation},
          {"config", config},
          {"winner", winner_params},
          {"accuracy", metrics::to_json(accuracy)},
          {"macro_f1", metrics::to_json(macro_f1)},
          {"weighted_f1", metrics::to_json(weighted_f1)},
          {"per_class", pc},
          {"confusion", confusion},
          {"train_seconds", train_seconds},
          {"he_seconds", he_seconds},
          {"he_share", train_seconds > 0 ? he_seconds / train_seconds : 0.0},
          {"bytes", bytes},
          {"folds", fj},
          {"grid", gj},
          {"parties", pj}};
}

// ---------------------------------------------------------------------------
// Benchmark

BenchConfig BenchConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    BenchConfig c;
    c.data = DataSource::from_json(j.at("dataset"), base_dir);
    c.repeats = j.value("repeats", 3);
    if (j.contains("max_rows")) c.max_rows = j.at("max_rows").get<int>();
    c.key_bits = j.value("key_bits", 2048u);
    c.seed = j.value("seed", std::uint64_t{0});
    if (c.repeats < 1) throw ConfigError("repeats must be >= 1");
    for (const auto& e : j.at("entries")) {
      BenchEntry b;
      b.scenario = data::parse_scenario(e.at("scenario").get<std::string>());
      b.model = parse_model(e.at("model").get<std::string>());
      b.params = e.value("params", json::object());
      if (e.contains("max_rows")) b.max_rows = e.at("max_rows").get<int>();
      b.name = e.value("name", fmt::format("{}-{}", data::to_string(b.scenario), to_string(b.model)));
      if (b.scenario == data::Scenario::Svs && is_federated_model(b.model))
        throw ConfigError(fmt::format("bench entry '{}': federated models need 2VS or 3VS", b.name));
      if (b.scenario != data::Scenario::Svs && !is_federated_model(b.model))
        throw ConfigError(fmt::format("bench entry '{}': centralized models run under SVS", b.name));
      check_keys(b.model, b.params, "params");
      c.entries.push_back(std::move(b));
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid bench config: {}", e.what()));
  }
}

BenchConfig BenchConfig::load(const fs::path& path) { return from_json(read_json_file(path), path.parent_path()); }

json BenchRow::to_json() const {
  return {{"name", name},
          {"scenario", scenario},
          {"model", model},
          {"rows", rows},
          {"wall_seconds", wall_seconds},
          {"critical_path_seconds", critical_path_seconds},
          {"he_seconds", he_seconds},
          {"he_share", he_share},
          {"bytes", bytes}};
}

std::vector<BenchRow> benchmark_time(const BenchConfig& cfg, const Progress& progress) {
  std::map<data::Scenario, PreparedData> cache;
  std::vector<BenchRow> out;
  std::vector<std::vector<int>> entry_rows;
  for (const auto& e : cfg.entries) {
    auto it = cache.find(e.scenario);
    if (it == cache.end()) it = cache.emplace(e.scenario, prepare_data(cfg.data, e.scenario)).first;
    std::vector<int> rows(static_cast<std::size_t>(it->second.binned.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    const auto max_rows = e.max_rows ? e.max_rows : cfg.max_rows;
    if (max_rows && *max_rows < static_cast<int>(rows.size())) {
      std::mt19937_64 rng(mix_seed(cfg.seed, 0xb3));
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(static_cast<std::size_t>(*max_rows));
      std::sort(rows.begin(), rows.end());
    }
    BenchRow row;
    row.name = e.name;
    row.scenario = data::to_string(e.scenario);
    row.model = to_string(e.model);
    row.rows = rows.size();
    row.wall_seconds = row.critical_path_seconds = std::numeric_limits<double>::infinity();
    out.push_back(std::move(row));
    entry_rows.push_back(std::move(rows));
  }

  // Repeats run round-robin over the entries so slow drift in machine load hits all of them.
  std::vector<std::vector<double>> step_min(cfg.entries.size());
  for (int rep = 0; rep < cfg.repeats; ++rep)
    for (std::size_t i = 0; i < cfg.entries.size(); ++i) {
      const auto& e = cfg.entries[i];
      auto& row = out[i];
      const auto t = train_model(e.model, cache.at(e.scenario), e.params, entry_rows[i], cfg.seed, cfg.key_bits, std::nullopt);
      row.critical_path_seconds = std::min(row.critical_path_seconds, t.stats.critical_path);
      auto& mins = step_min[i];
      if (rep == 0) mins = t.stats.steps;
      if (t.stats.steps.size() != mins.size()) throw Error(fmt::format("{}: step count changed between repeats", e.name));
      for (std::size_t s = 0; s < mins.size(); ++s) mins[s] = std::min(mins[s], t.stats.steps[s]);
      if (t.stats.wall < row.wall_seconds) {
        row.wall_seconds = t.stats.wall;
        row.he_seconds = t.stats.he;
        row.he_share = t.stats.busy > 0 ? t.stats.he / t.stats.busy : 0.0;
        row.bytes = t.stats.bytes;
      }
      if (progress && rep + 1 == cfg.repeats) progress(fmt::format("{}: {:.3f} s", row.name, row.wall_seconds));
    }
  // Per-step minima filter interference that hits single steps of otherwise fast repeats.
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!step_min[i].empty()) out[i].critical_path_seconds = std::accumulate(step_min[i].begin(), step_min[i].end(), 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::vector<json> collect_reports(const json& doc) {
  std::vector<json> out;
  if (doc.is_array()) {
    for (const auto& r : doc) out.push_back(r);
  } else if (doc.contains("reports")) {
    for (const auto& r : doc.at("reports")) out.push_back(r);
  } else if (doc.contains("accuracy")) {
    out.push_back(doc);
  }
  return out;
}

std::string pm(const json& ms) {
  return fmt::format("{:.2f} ± {:.2f}", ms.at("mean").get<double>(), ms.at("std").get<double>());
}

}  // namespace

std::string render_markdown(const json& doc) {
  std::string out;
  const auto reports = collect_reports(doc);
  if (!reports.empty()) {
    out += "| Scenario | Model | Cooperation | Accuracy (%) | Macro-F1 (%) | Weighted-F1 (%) |\n";
    out += "|---|---|---|---|---|---|\n";
    for (const auto& r : reports)
      out += fmt::format("| {} | {} | {} | {} | {} | {} |\n", r.at("scenario").get<std::string>(),
                         r.at("model").get<std::string>(), r.at("cooperation").get<std::string>(), pm(r.at("accuracy")),
                         pm(r.at("macro_f1")), pm(r.at("weighted_f1")));
  }
  if (doc.is_object() && doc.contains("timing")) {
    if (!out.empty()) out += "\n";
    out += "| Name | Scenario | Model | Rows | Wall (s) | Critical path (s) | HE (s) | HE share (%) | Bytes |\n";
    out += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& t : doc.at("timing"))
      out += fmt::format("| {} | {} | {} | {} | {:.3f} | {:.3f} | {:.3f} | {:.2f} | {} |\n", t.at("name").get<std::string>(),
                         t.at("scenario").get<std::string>(), t.at("model").get<std::string>(), t.at("rows").get<std::size_t>(),
                         t.at("wall_seconds").get<double>(), t.at("critical_path_seconds").get<double>(),
                         t.at("he_seconds").get<double>(), 100 * t.at("he_share").get<double>(),
                         t.at("bytes").get<std::uint64_t>());
  }
  if (out.empty()) throw ParseError("document holds neither reports nor timing rows");
  return out;
}

std::string render_csv(const json& doc) {
  std::string out;
  const auto reports = collect_reports(doc);
  if (!reports.empty()) {
    out += "name,scenario,model,cooperation,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,weighted_f1_mean,weighted_f1_std\n";
    for (const auto& r : reports)
      out += fmt::format("{},{},{},{},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f}\n", r.at("name").get<std::string>(),
                         r.at("scenario").get<std::string>(), r.at("model").get<std::string>(),
                         r.at("cooperation").get<std::string>(), r["accuracy"]["mean"].get<double>(),
                         r["accuracy"]["std"].get<double>(), r["macro_f1"]["mean"].get<double>(),
                         r["macro_f1"]["std"].get<double>(), r["weighted_f1"]["mean"].get<double>(),
                         r["weighted_f1"]["std"].get<double>());
  }
  if (doc.is_object() && doc.contains("timing")) {
    if (!out.empty()) out += "\n";
    out += "name,scenario,model,rows,wall_seconds,critical_path_seconds,he_seconds,he_share,bytes\n";
    for (const auto& t : doc.at("timing"))
      out += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.4f},{}\n", t.at("name").get<std::string>(),
                         t.at("scenario").get<std::string>(), t.at("model").get<std::string>(), t.at("rows").get<std::size_t>(),
                         t.at("wall_seconds").get<double>(), t.at("critical_path_seconds").get<double>(),
                         t.at("he_seconds").get<double>(), t.at("he_share").get<double>(), t.at("bytes").get<std::uint64_t>());
  }
  if (out.empty()) throw ParseError("document holds neither reports nor timing rows");
  return out;
}

}  // namespace vflab::harness
