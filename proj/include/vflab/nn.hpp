#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"

namespace vflab::nn {

enum class Activation { Identity, Tanh, Relu };
enum class Init { GlorotUniform, HeNormal };

Activation parse_activation(std::string_view s);
std::string_view to_string(Activation a);
Init parse_init(std::string_view s);
std::string_view to_string(Init i);

struct MlpSpec {
  std::vector<int> widths;               // widths[0] is the input width
  std::vector<Activation> activations;   // one per layer (widths.size() - 1)
  Init init = Init::GlorotUniform;
  std::uint64_t seed = 0;

  int layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  void validate() const;

  /// `hidden` layers of `width` units with `act`, then a linear output layer.
  static MlpSpec classifier(int input, int hidden, int width, int outputs, Activation act,
                            Init init, std::uint64_t seed);
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct ForwardPass {
  std::vector<Eigen::MatrixXd> pre;   // per layer, batch x out
  std::vector<Eigen::MatrixXd> post;  // post[0] is the input, post[l+1] = act(pre[l])

  const Eigen::MatrixXd& output() const { return post.back(); }
};

struct ParamGrads {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

struct BackwardResult {
  ParamGrads grads;
  Eigen::MatrixXd input_grad;  // batch x input width
};

/// Dense feed-forward network; rows of a batch are samples.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec);
  Mlp(MlpSpec spec, std::vector<Layer> layers);

  const MlpSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  ForwardPass forward(const Eigen::MatrixXd& x) const;
  BackwardResult backward(const ForwardPass& fp, const Eigen::MatrixXd& upstream) const;
  void apply_sgd(const ParamGrads& grads, double learning_rate);

  bool all_finite() const;
  std::size_t parameter_count() const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct LossGrad {
  double loss = 0.0;           // mean cross-entropy over the batch
  Eigen::MatrixXd grad;        // d loss / d logits
};

LossGrad softmax_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels);

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 25;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

/// Mini-batch index lists for one epoch; identical for centralized and split training.
std::vector<std::vector<int>> batch_schedule(std::size_t n, const TrainConfig& cfg, int epoch);

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const int> rows);
std::vector<int> gather(const Labels& labels, std::span<const int> rows);

struct TrainResult {
  Mlp model;
  std::vector<double> epoch_loss;
};

/// Plain mini-batch SGD on softmax cross-entropy. Throws TrainingError on a non-finite loss.
TrainResult train_centralized(Mlp init, const Eigen::MatrixXd& x, const Labels& y, const TrainConfig& cfg);
TrainResult train_centralized(const MlpSpec& spec, const Eigen::MatrixXd& x, const Labels& y,
                              const TrainConfig& cfg);

Labels predict(const Mlp& model, const Eigen::MatrixXd& x);

}  // namespace vflab::nn
