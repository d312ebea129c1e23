#include "vflab/nn.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vflab::nn {

Activation parse_activation(std::string_view s) {
  if (s == "identity" || s == "linear") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError(fmt::format("unknown activation '{}'", s));
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "?";
}

Init parse_init(std::string_view s) {
  if (s == "glorot_uniform" || s == "glorot-uniform") return Init::GlorotUniform;
  if (s == "he_normal" || s == "he-normal") return Init::HeNormal;
  throw ConfigError(fmt::format("unknown init scheme '{}'", s));
}

std::string_view to_string(Init i) { return i == Init::GlorotUniform ? "glorot_uniform" : "he_normal"; }

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least one layer");
  if (activations.size() != widths.size() - 1) throw ConfigError("one activation per layer required");
  for (int w : widths)
    if (w <= 0) throw ConfigError("layer widths must be positive");
}

MlpSpec MlpSpec::classifier(int input, int hidden, int width, int outputs, Activation act, Init init,
                            std::uint64_t seed) {
  MlpSpec s;
  s.widths.push_back(input);
  for (int h = 0; h < hidden; ++h) {
    s.widths.push_back(width);
    s.activations.push_back(act);
  }
  s.widths.push_back(outputs);
  s.activations.push_back(Activation::Identity);
  s.init = init;
  s.seed = seed;
  return s;
}

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Relu: return z.cwiseMax(0.0);
  }
  return z;
}

// d act / d z, elementwise, expressed through pre- and post-activation values.
Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post, Activation a) {
  switch (a) {
    case Activation::Identity: return Eigen::MatrixXd::Ones(pre.rows(), pre.cols());
    case Activation::Tanh: return (1.0 - post.array().square()).matrix();
    case Activation::Relu: return (pre.array() > 0.0).cast<double>().matrix();
  }
  return pre;
}

}  // namespace

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  for (int l = 0; l < spec_.layers(); ++l) {
    const int in = spec_.widths[static_cast<std::size_t>(l)];
    const int out = spec_.widths[static_cast<std::size_t>(l) + 1];
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    if (spec_.init == Init::GlorotUniform) {
      std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / (in + out)), std::sqrt(6.0 / (in + out)));
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
    } else {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in));
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(MlpSpec spec, std::vector<Layer> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
  spec_.validate();
  if (static_cast<int>(layers_.size()) != spec_.layers()) throw ConfigError("layer count does not match spec");
  for (int l = 0; l < spec_.layers(); ++l) {
    const auto& L = layers_[static_cast<std::size_t>(l)];
    if (L.weight.rows() != spec_.widths[static_cast<std::size_t>(l) + 1] ||
        L.weight.cols() != spec_.widths[static_cast<std::size_t>(l)] || L.bias.size() != L.weight.rows())
      throw ConfigError(fmt::format("layer {} parameter shape does not match spec", l));
  }
}

ForwardPass Mlp::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != spec_.input_width())
    throw ConfigError(fmt::format("input width {} does not match model input {}", x.cols(), spec_.input_width()));
  ForwardPass fp;
  fp.post.push_back(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = fp.post.back() * layers_[l].weight.transpose();
    z.rowwise() += layers_[l].bias.transpose();
    fp.post.push_back(activate(z, spec_.activations[l]));
    fp.pre.push_back(std::move(z));
  }
  return fp;
}

BackwardResult Mlp::backward(const ForwardPass& fp, const Eigen::MatrixXd& upstream) const {
  if (fp.pre.size() != layers_.size()) throw ConfigError("forward pass does not belong to this model");
  if (upstream.rows() != fp.output().rows() || upstream.cols() != fp.output().cols())
    throw ConfigError("upstream gradient shape does not match model output");
  BackwardResult r;
  r.grads.weight.resize(layers_.size());
  r.grads.bias.resize(layers_.size());
  Eigen::MatrixXd delta = upstream;  // d loss / d post[l+1]
  for (std::size_t l = layers_.size(); l-- > 0;) {
    delta = delta.cwiseProduct(activation_grad(fp.pre[l], fp.post[l + 1], spec_.activations[l]));
    r.grads.weight[l] = delta.transpose() * fp.post[l];
    r.grads.bias[l] = delta.colwise().sum().transpose();
    delta = delta * layers_[l].weight;
  }
  r.input_grad = std::move(delta);
  return r;
}

void Mlp::apply_sgd(const ParamGrads& grads, double learning_rate) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight -= learning_rate * grads.weight[l];
    layers_[l].bias -= learning_rate * grads.bias[l];
  }
}

bool Mlp::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const Layer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    std::vector<double> w;
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.push_back(l.weight(i, j));
    layers.push_back({{"shape", {l.weight.rows(), l.weight.cols()}},
                      {"weight", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  std::vector<std::string> acts;
  for (auto a : spec_.activations) acts.emplace_back(to_string(a));
  return {{"widths", spec_.widths}, {"activations", acts}, {"init", to_string(spec_.init)},
          {"seed", spec_.seed},     {"layers", layers}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  MlpSpec spec;
  spec.widths = j.at("widths").get<std::vector<int>>();
  for (const auto& a : j.at("activations")) spec.activations.push_back(parse_activation(a.get<std::string>()));
  spec.init = parse_init(j.at("init").get<std::string>());
  spec.seed = j.at("seed").get<std::uint64_t>();
  std::vector<Layer> layers;
  for (const auto& l : j.at("layers")) {
    const auto shape = l.at("shape").get<std::vector<Eigen::Index>>();
    const auto w = l.at("weight").get<std::vector<double>>();
    const auto b = l.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != shape.at(0) * shape.at(1)) throw ParseError("weight array size mismatch");
    Layer layer{Eigen::MatrixXd(shape[0], shape[1]), Eigen::VectorXd(static_cast<Eigen::Index>(b.size()))};
    for (Eigen::Index r = 0; r < shape[0]; ++r)
      for (Eigen::Index c = 0; c < shape[1]; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * shape[1] + c)];
    for (std::size_t i = 0; i < b.size(); ++i) layer.bias(static_cast<Eigen::Index>(i)) = b[i];
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(spec), std::move(layers));
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

LossGrad softmax_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw ConfigError("label count does not match batch");
  LossGrad out;
  out.grad = softmax_rows(logits);
  const double inv_b = logits.rows() > 0 ? 1.0 / static_cast<double>(logits.rows()) : 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw ConfigError("label outside the output width");
    out.loss -= std::log(std::max(out.grad(i, y), 1e-300));
    out.grad(i, y) -= 1.0;
  }
  out.loss *= inv_b;
  out.grad *= inv_b;
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::vector<std::vector<int>> batch_schedule(std::size_t n, const TrainConfig& cfg, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (cfg.shuffle) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x5eed));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<int>> batches;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < n; start += bs)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + bs)));
  return batches;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, std::span<const int> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
  return out;
}

std::vector<int> gather(const Labels& labels, std::span<const int> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(labels[static_cast<std::size_t>(r)]);
  return out;
}

TrainResult train_centralized(Mlp init, const Eigen::MatrixXd& x, const Labels& y, const TrainConfig& cfg) {
  cfg.validate();
  if (static_cast<Eigen::Index>(y.size()) != x.rows()) throw ConfigError("label count does not match rows");
  TrainResult r{std::move(init), {}};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : batch_schedule(static_cast<std::size_t>(x.rows()), cfg, epoch)) {
      const auto fp = r.model.forward(gather_rows(x, batch));
      const auto lg = softmax_cross_entropy(fp.output(), gather(y, batch));
      if (!std::isfinite(lg.loss))
        throw TrainingError(fmt::format("non-finite loss at epoch {} (lr={}, batch={})", epoch,
                                        cfg.learning_rate, cfg.batch_size));
      total += lg.loss * static_cast<double>(batch.size());
      r.model.apply_sgd(r.model.backward(fp, lg.grad).grads, cfg.learning_rate);
    }
    r.epoch_loss.push_back(x.rows() > 0 ? total / static_cast<double>(x.rows()) : 0.0);
  }
  return r;
}

TrainResult train_centralized(const MlpSpec& spec, const Eigen::MatrixXd& x, const Labels& y,
                              const TrainConfig& cfg) {
  return train_centralized(Mlp(spec), x, y, cfg);
}

Labels predict(const Mlp& model, const Eigen::MatrixXd& x) {
  Labels out(static_cast<std::size_t>(x.rows()));
  if (x.rows() == 0) return out;
  const auto logits = model.forward(x).output();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index k = 0;
    logits.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

}  // namespace vflab::nn
