#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"
#include "vflab/federation.hpp"
#include "vflab/nn.hpp"

namespace vflab::splitnn {

enum class MergeOp { Concat, Max, Min, Average, Product, Sum };

MergeOp parse_merge(std::string_view s);
std::string_view to_string(MergeOp op);

struct Topology {
  std::vector<nn::MlpSpec> bottoms;  // one per client
  MergeOp merge = MergeOp::Concat;
  nn::MlpSpec top;
  nn::TrainConfig train;

  /// Width the top model must accept given the bottom outputs and merge op.
  int merged_width() const;
  /// Checks the width invariants against the clients' feature counts.
  void validate(std::span<const int> client_widths) const;
};

struct BottomDefaults {
  int hidden_layers = 1;
  int hidden_width = 32;
  int output_width = 16;
  nn::Activation activation = nn::Activation::Tanh;
};

/// Symmetric bottoms per `bottom`, then a classifier top of `top_hidden` x `top_width`.
Topology make_topology(std::span<const int> client_widths, const BottomDefaults& bottom, MergeOp merge,
                       int top_hidden, int top_width, nn::Activation top_activation, nn::Init init,
                       const nn::TrainConfig& train, int num_classes = kNumClasses);

Eigen::MatrixXd merge(std::span<const Eigen::MatrixXd> cuts, MergeOp op);
/// Gradient of the merged tensor routed back to each cut. Max/min ties go to the lowest client.
std::vector<Eigen::MatrixXd> merge_backward(const Eigen::MatrixXd& upstream, MergeOp op,
                                            std::span<const Eigen::MatrixXd> cuts);

struct SplitNnModel {
  std::vector<nn::Mlp> bottoms;
  nn::Mlp top;
  MergeOp merge = MergeOp::Concat;

  /// Fresh parameters from the topology's seeded specs.
  static SplitNnModel init(const Topology& topo);
  nlohmann::json to_json() const;
};

/// State after one completed batch (all SGD updates applied).
struct BatchTrace {
  int epoch = 0;
  int batch = 0;
  std::vector<int> rows;
  Eigen::MatrixXd logits;  // top output before the update
  double loss = 0.0;
  const SplitNnModel* model = nullptr;
};

using BatchObserver = std::function<void(const BatchTrace&)>;

struct TrainResult {
  SplitNnModel model;
  std::vector<double> epoch_loss;
  fed::Transcript transcript;
};

/// Clients are parties 0..k-1 holding `client_x[p]`; the server (label holder) is party k.
TrainResult train_splitnn(std::span<const Eigen::MatrixXd> client_x, const Labels& labels, const Topology& topo,
                          const fed::RunOptions& options = {}, std::optional<SplitNnModel> initial = std::nullopt,
                          const BatchObserver& observer = {});

Eigen::MatrixXd predict_logits(const SplitNnModel& m, std::span<const Eigen::MatrixXd> client_x);
Labels predict_splitnn(const SplitNnModel& m, std::span<const Eigen::MatrixXd> client_x);

}  // namespace vflab::splitnn
