#include "vflab/gbdt.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace vflab::gbdt {

void Params::validate() const {
  if (n_trees < 0) throw ConfigError("n_trees must be >= 0");
  if (max_depth < 0) throw ConfigError("max_depth must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (lambda < 0 || gamma < 0) throw ConfigError("lambda and gamma must be >= 0");
  if (min_child < 1) throw ConfigError("min_child must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

nlohmann::json Params::to_json() const {
  return {{"n_trees", n_trees},   {"max_depth", max_depth}, {"learning_rate", learning_rate},
          {"lambda", lambda},     {"gamma", gamma},         {"min_child", min_child},
          {"num_classes", num_classes}};
}

Params Params::from_json(const nlohmann::json& j) {
  Params p;
  p.n_trees = j.value("n_trees", p.n_trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.lambda = j.value("lambda", p.lambda);
  p.gamma = j.value("gamma", p.gamma);
  p.min_child = j.value("min_child", p.min_child);
  p.num_classes = j.value("num_classes", p.num_classes);
  p.validate();
  return p;
}

SplitCandidates SplitCandidates::concat(std::span<const SplitCandidates> parts) {
  SplitCandidates out;
  for (const auto& p : parts)
    out.thresholds.insert(out.thresholds.end(), p.thresholds.begin(), p.thresholds.end());
  return out;
}

SplitCandidates propose_split_candidates(const BinMatrix& x) {
  SplitCandidates c;
  c.thresholds.resize(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::set<int> seen;
    for (Eigen::Index i = 0; i < x.rows(); ++i) seen.insert(x(i, j));
    auto& t = c.thresholds[static_cast<std::size_t>(j)];
    for (auto it = seen.begin(); it != seen.end() && std::next(it) != seen.end(); ++it)
      t.push_back(0.5 * (*it + *std::next(it)));
  }
  return c;
}

Gradients update_gradients(const Labels& labels, const Eigen::MatrixXd& scores) {
  const int n = static_cast<int>(scores.rows());
  const int k = static_cast<int>(scores.cols());
  if (static_cast<int>(labels.size()) != n) throw ConfigError("labels/scores row mismatch");
  Gradients out{n, k, std::vector<GradientPair>(static_cast<std::size_t>(n) * k)};
  std::vector<double> p(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    const double mx = scores.row(i).maxCoeff();
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += (p[c] = std::exp(scores(i, c) - mx));
    for (int c = 0; c < k; ++c) {
      const double pc = p[c] / z;
      out.at(i, c) = {pc - (labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0), pc * (1.0 - pc)};
    }
  }
  return out;
}

BinIndex BinIndex::build(const BinMatrix& x, SplitCandidates candidates) {
  if (candidates.num_features() != static_cast<std::size_t>(x.cols()))
    throw ConfigError("candidate list does not match feature count");
  BinIndex idx;
  idx.bin.resize(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto& t = candidates.thresholds[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      idx.bin(i, j) = static_cast<std::uint8_t>(std::lower_bound(t.begin(), t.end(), v) - t.begin());
    }
  }
  idx.candidates = std::move(candidates);
  return idx;
}

BinStats node_totals(const Gradients& grads, int cls, std::span<const int> samples) {
  BinStats s;
  for (int i : samples) {
    const auto& gp = grads.at(i, cls);
    s.g += gp.g;
    s.h += gp.h;
    ++s.count;
  }
  return s;
}

Histogram compute_hist(const Gradients& grads, int cls, std::span<const int> samples,
                       const BinIndex& index) {
  Histogram hist;
  hist.total = node_totals(grads, cls, samples);
  const auto nf = index.candidates.num_features();
  hist.features.resize(nf);
  for (std::size_t j = 0; j < nf; ++j) {
    auto& bins = hist.features[j];
    bins.assign(static_cast<std::size_t>(index.bins_of(j)), BinStats{});
    const auto col = index.bin.col(static_cast<Eigen::Index>(j));
    for (int i : samples) {
      auto& b = bins[col(i)];
      const auto& gp = grads.at(i, cls);
      b.g += gp.g;
      b.h += gp.h;
      ++b.count;
    }
  }
  return hist;
}

double split_gain(const BinStats& left, const BinStats& right, double lambda, double gamma) {
  const double g = left.g + right.g;
  const double h = left.h + right.h;
  return 0.5 * (left.g * left.g / (left.h + lambda) + right.g * right.g / (right.h + lambda) -
                g * g / (h + lambda)) -
         gamma;
}

double leaf_weight(const BinStats& s, double lambda) { return -s.g / (s.h + lambda); }

std::optional<SplitDecision> best_split(const Histogram& hist, const SplitCandidates& candidates,
                                        const Params& params) {
  if (hist.features.size() != candidates.num_features())
    throw ConfigError("histogram and candidates disagree on feature count");
  std::optional<SplitDecision> best;
  for (std::size_t j = 0; j < hist.features.size(); ++j) {
    const auto& bins = hist.features[j];
    const auto& thr = candidates.thresholds[j];
    BinStats left;
    for (std::size_t b = 0; b < thr.size(); ++b) {
      left.g += bins[b].g;
      left.h += bins[b].h;
      left.count += bins[b].count;
      const BinStats right{hist.total.g - left.g, hist.total.h - left.h, hist.total.count - left.count};
      if (left.count < params.min_child || right.count < params.min_child) continue;
      const double gain = split_gain(left, right, params.lambda, params.gamma);
      if (gain > kGainTolerance && (!best || gain > best->gain + kGainTolerance * std::max(1.0, std::abs(best->gain))))
        best = SplitDecision{static_cast<int>(j), static_cast<int>(b), thr[b], gain, left, right};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int out = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out = std::max(out, d[i]);
    if (!nodes[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return out;
}

TreeGrowth::TreeGrowth(std::vector<int> root_samples) {
  tree_.nodes.emplace_back();
  frontier_.push_back({0, std::move(root_samples)});
  split_done_.assign(1, false);
}

void TreeGrowth::split(std::size_t pos, int feature, double threshold, const std::vector<bool>& goes_left) {
  auto& node = frontier_.at(pos);
  if (goes_left.size() != node.samples.size()) throw ProtocolError("partition bits do not match node size");
  if (split_done_[pos]) throw ProtocolError("node split twice");
  FrontierNode l{static_cast<int>(tree_.nodes.size()), {}};
  FrontierNode r{l.node_id + 1, {}};
  for (std::size_t i = 0; i < goes_left.size(); ++i)
    (goes_left[i] ? l.samples : r.samples).push_back(node.samples[i]);
  auto& tn = tree_.nodes[static_cast<std::size_t>(node.node_id)];
  tn.feature = feature;
  tn.threshold = threshold;
  tn.left = l.node_id;
  tn.right = r.node_id;
  tree_.nodes.emplace_back();
  tree_.nodes.emplace_back();
  next_.push_back(std::move(l));
  next_.push_back(std::move(r));
  split_done_[pos] = true;
}

void TreeGrowth::advance() {
  for (std::size_t i = 0; i < frontier_.size(); ++i)
    if (!split_done_[i]) leaves_.push_back(std::move(frontier_[i]));
  frontier_ = std::move(next_);
  next_.clear();
  split_done_.assign(frontier_.size(), false);
}

Tree TreeGrowth::finish(const Gradients& grads, int cls, double lambda) {
  advance();
  for (auto& f : frontier_) leaves_.push_back(std::move(f));
  frontier_.clear();
  split_done_.clear();
  for (const auto& leaf : leaves_)
    tree_.nodes[static_cast<std::size_t>(leaf.node_id)].weight = leaf_weight(node_totals(grads, cls, leaf.samples), lambda);
  return tree_;
}

// ---------------------------------------------------------------------------

std::vector<double> prior_scores(const Labels& labels, int num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
  const double n = std::max<double>(1.0, static_cast<double>(labels.size()));
  std::vector<double> out;
  for (double c : counts) out.push_back(std::log(std::max(c / n, 1e-6)));
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    p.row(i) = (scores.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Labels argmax_rows(const Eigen::MatrixXd& scores) {
  Labels out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index k = 0;
    scores.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

double log_loss(const Labels& labels, const Eigen::MatrixXd& scores) {
  const auto p = softmax_rows(scores);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) loss -= std::log(std::max(p(i, labels[static_cast<std::size_t>(i)]), 1e-300));
  return p.rows() > 0 ? loss / static_cast<double>(p.rows()) : 0.0;
}

Eigen::MatrixXd GbdtModel::predict_margin(const BinMatrix& x) const {
  if (x.rows() > 0 && x.cols() != num_features)
    throw ConfigError(fmt::format("model expects {} features, got {}", num_features, x.cols()));
  Eigen::MatrixXd out(x.rows(), params.num_classes);
  std::vector<double> row(static_cast<std::size_t>(params.num_classes));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    accumulate_row([&](int f) { return static_cast<double>(x(i, f)); }, row);
    for (int k = 0; k < params.num_classes; ++k) out(i, k) = row[static_cast<std::size_t>(k)];
  }
  return out;
}

Eigen::MatrixXd GbdtModel::predict_proba(const BinMatrix& x) const { return softmax_rows(predict_margin(x)); }

Labels GbdtModel::predict(const BinMatrix& x) const { return argmax_rows(predict_margin(x)); }

nlohmann::json GbdtModel::to_json() const {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& round : trees) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& tree : round) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : tree.nodes) {
        if (n.is_leaf())
          nodes.push_back({{"leaf", n.weight}});
        else
          nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
      per_class.push_back(std::move(nodes));
    }
    rounds.push_back(std::move(per_class));
  }
  return {{"params", params.to_json()},
          {"num_features", num_features},
          {"base_score", base_score},
          {"trees", std::move(rounds)}};
}

GbdtModel GbdtModel::from_json(const nlohmann::json& j) {
  GbdtModel m;
  m.params = Params::from_json(j.at("params"));
  m.num_features = j.at("num_features").get<int>();
  m.base_score = j.at("base_score").get<std::vector<double>>();
  for (const auto& round : j.at("trees")) {
    std::vector<Tree> per_class;
    for (const auto& nodes : round) {
      Tree t;
      for (const auto& n : nodes) {
        TreeNode tn;
        if (n.contains("leaf")) {
          tn.weight = n.at("leaf").get<double>();
        } else {
          tn.feature = n.at("feature").get<int>();
          tn.threshold = n.at("threshold").get<double>();
          tn.left = n.at("left").get<int>();
          tn.right = n.at("right").get<int>();
        }
        t.nodes.push_back(tn);
      }
      per_class.push_back(std::move(t));
    }
    m.trees.push_back(std::move(per_class));
  }
  return m;
}

GbdtModel fit(const BinMatrix& x, const Labels& y, const Params& params) {
  params.validate();
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) throw ConfigError("label count does not match rows");
  for (int v : y)
    if (v < 0 || v >= params.num_classes) throw ConfigError("label outside [0, num_classes)");
  if (std::set<int>(y.begin(), y.end()).size() < 2) throw ConfigError("training data contains a single class");

  const int n = static_cast<int>(x.rows());
  const int k_classes = params.num_classes;
  GbdtModel model;
  model.params = params;
  model.num_features = static_cast<int>(x.cols());
  model.base_score = prior_scores(y, k_classes);

  Eigen::MatrixXd scores(n, k_classes);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < k_classes; ++k) scores(i, k) = model.base_score[static_cast<std::size_t>(k)];

  const BinIndex index = BinIndex::build(x, propose_split_candidates(x));
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

  for (int t = 0; t < params.n_trees; ++t) {
    const Gradients grads = update_gradients(y, scores);
    std::vector<TreeGrowth> growth(static_cast<std::size_t>(k_classes), TreeGrowth(all));
    for (int depth = 0; depth < params.max_depth; ++depth) {
      for (int k = 0; k < k_classes; ++k) {
        auto& g = growth[static_cast<std::size_t>(k)];
        for (std::size_t pos = 0; pos < g.frontier().size(); ++pos) {
          const auto& samples = g.frontier()[pos].samples;
          const auto decision = best_split(compute_hist(grads, k, samples, index), index.candidates, params);
          if (!decision) continue;
          std::vector<bool> goes_left(samples.size());
          for (std::size_t s = 0; s < samples.size(); ++s)
            goes_left[s] = x(samples[s], decision->feature) <= decision->threshold;
          g.split(pos, decision->feature, decision->threshold, goes_left);
        }
      }
      for (auto& g : growth) g.advance();
    }
    std::vector<Tree> round;
    for (int k = 0; k < k_classes; ++k) {
      auto& g = growth[static_cast<std::size_t>(k)];
      round.push_back(g.finish(grads, k, params.lambda));
      const double w_scale = params.learning_rate;
      for (const auto& leaf : g.leaves()) {
        const double w = round.back().nodes[static_cast<std::size_t>(leaf.node_id)].weight;
        for (int i : leaf.samples) scores(i, k) += w_scale * w;
      }
    }
    model.trees.push_back(std::move(round));
  }
  return model;
}

}  // namespace vflab::gbdt
