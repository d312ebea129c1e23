#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"
#include "vflab/dataset.hpp"

namespace vflab::gbdt {

using data::BinMatrix;

struct Params {
  int n_trees = 10;  // boosting rounds T; each round grows one tree per class
  int max_depth = 6;
  double learning_rate = 0.3;
  double lambda = 1.0;
  double gamma = 0.0;
  int min_child = 1;  // minimum samples per child
  int num_classes = kNumClasses;

  void validate() const;
  nlohmann::json to_json() const;
  static Params from_json(const nlohmann::json& j);
};

/// Per feature, strictly increasing thresholds. A sample goes left when value <= threshold.
struct SplitCandidates {
  std::vector<std::vector<double>> thresholds;

  std::size_t num_features() const { return thresholds.size(); }
  /// Concatenates candidate lists in party order (global feature order).
  static SplitCandidates concat(std::span<const SplitCandidates> parts);
};

/// Midpoints between adjacent observed categories of each column.
SplitCandidates propose_split_candidates(const BinMatrix& x);

struct GradientPair {
  double g = 0.0;
  double h = 0.0;
};

/// Row-major n x K first/second-order gradients of the softmax loss.
struct Gradients {
  int rows = 0;
  int classes = 0;
  std::vector<GradientPair> pairs;

  const GradientPair& at(int i, int k) const { return pairs[static_cast<std::size_t>(i) * classes + k]; }
  GradientPair& at(int i, int k) { return pairs[static_cast<std::size_t>(i) * classes + k]; }
};

/// g = p - 1{y=k}, h = p(1-p) with p the row-wise softmax of `scores`.
Gradients update_gradients(const Labels& labels, const Eigen::MatrixXd& scores);

struct BinStats {
  double g = 0.0;
  double h = 0.0;
  std::int64_t count = 0;
};

/// Per-feature bins for one tree node. Feature j has thresholds[j].size() + 1 bins.
struct Histogram {
  BinStats total;  // sums over the node's samples
  std::vector<std::vector<BinStats>> features;
};

/// Precomputed bin index of every cell given the candidates.
struct BinIndex {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> bin;  // rows x features
  SplitCandidates candidates;

  static BinIndex build(const BinMatrix& x, SplitCandidates candidates);
  int bins_of(std::size_t feature) const {
    return static_cast<int>(candidates.thresholds[feature].size()) + 1;
  }
};

BinStats node_totals(const Gradients& grads, int cls, std::span<const int> samples);

/// Accumulates (g, h, 1) of each node sample into its bin for every feature.
Histogram compute_hist(const Gradients& grads, int cls, std::span<const int> samples,
                       const BinIndex& index);

struct SplitDecision {
  int feature = -1;
  int threshold_index = -1;
  double threshold = 0.0;
  double gain = 0.0;
  BinStats left;
  BinStats right;
};

double split_gain(const BinStats& left, const BinStats& right, double lambda, double gamma);
double leaf_weight(const BinStats& s, double lambda);

/// Gains closer than this (relative, floored at 1) count as ties. Keeps split choice stable
/// under the fixed-point noise of encrypted histograms.
inline constexpr double kGainTolerance = 1e-8;

/// Best (feature, threshold) by second-order gain; ties go to the lowest feature, then
/// threshold. Returns nullopt when no split has gain above kGainTolerance with both
/// children >= min_child.
std::optional<SplitDecision> best_split(const Histogram& hist, const SplitCandidates& candidates,
                                        const Params& params);

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight = 0.0;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  int depth() const;
  /// `value(feature)` returns the cell for the row being routed.
  template <typename ValueFn>
  int leaf_for(ValueFn&& value) const {
    int id = 0;
    while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(id)];
      id = value(n.feature) <= n.threshold ? n.left : n.right;
    }
    return id;
  }
};

/// Level-order growth of one tree, shared by centralized training and every FedTree party
/// so that node ids and sample orders agree across implementations.
class TreeGrowth {
 public:
  struct FrontierNode {
    int node_id;
    std::vector<int> samples;  // ascending
  };

  explicit TreeGrowth(std::vector<int> root_samples);

  const std::vector<FrontierNode>& frontier() const { return frontier_; }
  /// Splits frontier node `pos`; goes_left[i] routes frontier_[pos].samples[i].
  void split(std::size_t pos, int feature, double threshold, const std::vector<bool>& goes_left);
  /// Moves to the next level; unsplit frontier nodes become leaves.
  void advance();
  /// Assigns leaf weights -G/(H+lambda) from plaintext gradients and returns the tree.
  Tree finish(const Gradients& grads, int cls, double lambda);
  /// (leaf id, samples) for every leaf, valid after finish().
  const std::vector<FrontierNode>& leaves() const { return leaves_; }

 private:
  Tree tree_;
  std::vector<FrontierNode> frontier_;
  std::vector<FrontierNode> next_;
  std::vector<bool> split_done_;
  std::vector<FrontierNode> leaves_;
};

struct GbdtModel {
  Params params;
  int num_features = 0;
  std::vector<double> base_score;       // per class
  std::vector<std::vector<Tree>> trees;  // [round][class]

  template <typename ValueFn>
  void accumulate_row(ValueFn&& value, std::span<double> out) const {
    for (int k = 0; k < params.num_classes; ++k) out[static_cast<std::size_t>(k)] = base_score[static_cast<std::size_t>(k)];
    for (const auto& round : trees)
      for (int k = 0; k < params.num_classes; ++k) {
        const auto& tree = round[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(k)] +=
            params.learning_rate * tree.nodes[static_cast<std::size_t>(tree.leaf_for(value))].weight;
      }
  }

  Eigen::MatrixXd predict_margin(const BinMatrix& x) const;
  Eigen::MatrixXd predict_proba(const BinMatrix& x) const;
  Labels predict(const BinMatrix& x) const;

  nlohmann::json to_json() const;
  static GbdtModel from_json(const nlohmann::json& j);
};

/// log of the smoothed class frequencies; a model with no trees predicts the majority class.
std::vector<double> prior_scores(const Labels& labels, int num_classes);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);
Labels argmax_rows(const Eigen::MatrixXd& scores);
double log_loss(const Labels& labels, const Eigen::MatrixXd& scores);

GbdtModel fit(const BinMatrix& x, const Labels& y, const Params& params);

}  // namespace vflab::gbdt
