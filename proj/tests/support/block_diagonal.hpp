#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <vector>

#include "vflab/nn.hpp"
#include "vflab/splitnn.hpp"

namespace vflab::fixtures {

/// Monolithic MLP equal to a concat-merge split model: bottom layers become block-diagonal
/// matrices whose cross blocks are held at zero during training.
class BlockDiagonalMlp {
 public:
  explicit BlockDiagonalMlp(const splitnn::SplitNnModel& m) {
    const auto depth = m.bottoms.front().layers().size();
    for (const auto& b : m.bottoms)
      if (b.layers().size() != depth) throw std::invalid_argument("bottoms must share a depth");
    nn::MlpSpec spec;
    std::vector<nn::Layer> layers;
    int in = 0;
    for (const auto& b : m.bottoms) in += b.spec().input_width();
    spec.widths.push_back(in);
    for (std::size_t l = 0; l < depth; ++l) {
      Eigen::Index rows = 0, cols = 0;
      for (const auto& b : m.bottoms) {
        rows += b.layers()[l].weight.rows();
        cols += b.layers()[l].weight.cols();
      }
      nn::Layer layer{Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows)};
      Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(rows, cols);
      Eigen::Index r = 0, c = 0;
      for (const auto& b : m.bottoms) {
        const auto& w = b.layers()[l].weight;
        layer.weight.block(r, c, w.rows(), w.cols()) = w;
        layer.bias.segment(r, w.rows()) = b.layers()[l].bias;
        mask.block(r, c, w.rows(), w.cols()).setOnes();
        r += w.rows();
        c += w.cols();
      }
      const auto act = m.bottoms.front().spec().activations[l];
      for (const auto& b : m.bottoms)
        if (b.spec().activations[l] != act) throw std::invalid_argument("bottoms must share activations per layer");
      spec.widths.push_back(static_cast<int>(rows));
      spec.activations.push_back(act);
      layers.push_back(std::move(layer));
      masks_.push_back(std::move(mask));
    }
    for (std::size_t l = 0; l < m.top.layers().size(); ++l) {
      spec.widths.push_back(static_cast<int>(m.top.layers()[l].weight.rows()));
      spec.activations.push_back(m.top.spec().activations[l]);
      layers.push_back(m.top.layers()[l]);
      masks_.push_back(Eigen::MatrixXd::Ones(m.top.layers()[l].weight.rows(), m.top.layers()[l].weight.cols()));
    }
    net_ = nn::Mlp(spec, std::move(layers));
    bottom_depth_ = depth;
  }

  /// One masked SGD step; returns the logits before the update.
  Eigen::MatrixXd step(const Eigen::MatrixXd& x, const std::vector<int>& y, double lr, double* loss = nullptr) {
    const auto fp = net_.forward(x);
    const auto lg = nn::softmax_cross_entropy(fp.output(), y);
    auto grads = net_.backward(fp, lg.grad).grads;
    for (std::size_t l = 0; l < masks_.size(); ++l) grads.weight[l] = grads.weight[l].cwiseProduct(masks_[l]);
    net_.apply_sgd(grads, lr);
    if (loss) *loss = lg.loss;
    return fp.output();
  }

  /// Largest absolute difference between this network and the split model's parameters.
  double max_param_diff(const splitnn::SplitNnModel& m) const {
    double d = 0.0;
    for (std::size_t l = 0; l < bottom_depth_; ++l) {
      Eigen::Index r = 0, c = 0;
      const auto& big = net_.layers()[l];
      for (const auto& b : m.bottoms) {
        const auto& w = b.layers()[l].weight;
        d = std::max(d, (big.weight.block(r, c, w.rows(), w.cols()) - w).cwiseAbs().maxCoeff());
        d = std::max(d, (big.bias.segment(r, w.rows()) - b.layers()[l].bias).cwiseAbs().maxCoeff());
        r += w.rows();
        c += w.cols();
      }
      // Cross blocks must still be exactly zero.
      d = std::max(d, big.weight.cwiseProduct(Eigen::MatrixXd::Ones(big.weight.rows(), big.weight.cols()) - masks_[l])
                          .cwiseAbs()
                          .maxCoeff());
    }
    for (std::size_t l = 0; l < m.top.layers().size(); ++l) {
      const auto& a = net_.layers()[bottom_depth_ + l];
      const auto& b = m.top.layers()[l];
      d = std::max(d, (a.weight - b.weight).cwiseAbs().maxCoeff());
      d = std::max(d, (a.bias - b.bias).cwiseAbs().maxCoeff());
    }
    return d;
  }

  const nn::Mlp& net() const { return net_; }

 private:
  nn::Mlp net_;
  std::vector<Eigen::MatrixXd> masks_;
  std::size_t bottom_depth_ = 0;
};

}  // namespace vflab::fixtures
