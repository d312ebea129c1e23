#include "vflab/splitnn.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <memory>

#include "vflab/bytes.hpp"

namespace vflab::splitnn {

using fed::Channel;
using fed::FrameKind;
using fed::Phase;

MergeOp parse_merge(std::string_view s) {
  if (s == "concat") return MergeOp::Concat;
  if (s == "max") return MergeOp::Max;
  if (s == "min") return MergeOp::Min;
  if (s == "average" || s == "avg") return MergeOp::Average;
  if (s == "product") return MergeOp::Product;
  if (s == "sum") return MergeOp::Sum;
  throw ConfigError(fmt::format("unknown merge op '{}'", s));
}

std::string_view to_string(MergeOp op) {
  switch (op) {
    case MergeOp::Concat: return "concat";
    case MergeOp::Max: return "max";
    case MergeOp::Min: return "min";
    case MergeOp::Average: return "average";
    case MergeOp::Product: return "product";
    case MergeOp::Sum: return "sum";
  }
  return "?";
}

int Topology::merged_width() const {
  if (bottoms.empty()) return 0;
  if (merge == MergeOp::Concat) {
    int w = 0;
    for (const auto& b : bottoms) w += b.output_width();
    return w;
  }
  return bottoms.front().output_width();
}

void Topology::validate(std::span<const int> client_widths) const {
  if (bottoms.empty()) throw ConfigError("SplitNN needs at least one client");
  if (client_widths.size() != bottoms.size())
    throw ConfigError(fmt::format("{} bottom models for {} clients", bottoms.size(), client_widths.size()));
  for (std::size_t c = 0; c < bottoms.size(); ++c) {
    bottoms[c].validate();
    if (bottoms[c].input_width() != client_widths[c])
      throw ConfigError(fmt::format("bottom model {} expects {} inputs but the client holds {} features", c,
                                    bottoms[c].input_width(), client_widths[c]));
    if (merge != MergeOp::Concat && bottoms[c].output_width() != bottoms.front().output_width())
      throw ConfigError(fmt::format("merge '{}' needs equal bottom output widths", to_string(merge)));
  }
  top.validate();
  if (top.input_width() != merged_width())
    throw ConfigError(fmt::format("top model expects {} inputs but the merged cut has width {}", top.input_width(),
                                  merged_width()));
  train.validate();
}

Topology make_topology(std::span<const int> client_widths, const BottomDefaults& bottom, MergeOp merge,
                       int top_hidden, int top_width, nn::Activation top_activation, nn::Init init,
                       const nn::TrainConfig& train, int num_classes) {
  Topology t;
  t.merge = merge;
  t.train = train;
  for (std::size_t c = 0; c < client_widths.size(); ++c) {
    nn::MlpSpec s;
    s.widths.push_back(client_widths[c]);
    for (int l = 0; l < bottom.hidden_layers; ++l) s.widths.push_back(bottom.hidden_width);
    s.widths.push_back(bottom.output_width);
    s.activations.assign(static_cast<std::size_t>(s.layers()), bottom.activation);
    s.init = init;
    s.seed = mix_seed(train.seed, 1, c);
    t.bottoms.push_back(std::move(s));
  }
  t.top = nn::MlpSpec::classifier(t.merged_width(), top_hidden, top_width, num_classes, top_activation, init,
                                  mix_seed(train.seed, 2));
  t.validate(client_widths);
  return t;
}

Eigen::MatrixXd merge(std::span<const Eigen::MatrixXd> cuts, MergeOp op) {
  if (cuts.empty()) throw ConfigError("merge of zero cuts");
  const auto rows = cuts.front().rows();
  for (const auto& c : cuts) {
    if (c.rows() != rows) throw ConfigError("cuts disagree on batch size");
    if (op != MergeOp::Concat && c.cols() != cuts.front().cols())
      throw ConfigError(fmt::format("merge '{}' needs equal cut widths", to_string(op)));
  }
  if (op == MergeOp::Concat) {
    Eigen::Index width = 0;
    for (const auto& c : cuts) width += c.cols();
    Eigen::MatrixXd out(rows, width);
    Eigen::Index col = 0;
    for (const auto& c : cuts) {
      out.middleCols(col, c.cols()) = c;
      col += c.cols();
    }
    return out;
  }
  Eigen::MatrixXd out = cuts.front();
  for (std::size_t c = 1; c < cuts.size(); ++c) {
    switch (op) {
      case MergeOp::Max: out = out.cwiseMax(cuts[c]); break;
      case MergeOp::Min: out = out.cwiseMin(cuts[c]); break;
      case MergeOp::Product: out = out.cwiseProduct(cuts[c]); break;
      default: out += cuts[c]; break;
    }
  }
  if (op == MergeOp::Average) out /= static_cast<double>(cuts.size());
  return out;
}

std::vector<Eigen::MatrixXd> merge_backward(const Eigen::MatrixXd& upstream, MergeOp op,
                                            std::span<const Eigen::MatrixXd> cuts) {
  if (cuts.empty()) throw ConfigError("merge_backward of zero cuts");
  const auto rows = cuts.front().rows();
  const Eigen::Index width = op == MergeOp::Concat ? merge(cuts, op).cols() : cuts.front().cols();
  if (upstream.rows() != rows || upstream.cols() != width)
    throw ConfigError(fmt::format("upstream gradient is {}x{}, merged cut is {}x{}", upstream.rows(), upstream.cols(),
                                  rows, width));
  std::vector<Eigen::MatrixXd> out;
  const auto k = cuts.size();
  switch (op) {
    case MergeOp::Concat: {
      Eigen::Index col = 0;
      for (const auto& c : cuts) {
        out.push_back(upstream.middleCols(col, c.cols()));
        col += c.cols();
      }
      break;
    }
    case MergeOp::Sum:
      out.assign(k, upstream);
      break;
    case MergeOp::Average:
      out.assign(k, upstream / static_cast<double>(k));
      break;
    case MergeOp::Max:
    case MergeOp::Min: {
      out.assign(k, Eigen::MatrixXd::Zero(rows, width));
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < width; ++j) {
          std::size_t win = 0;
          for (std::size_t c = 1; c < k; ++c) {
            const double v = cuts[c](i, j);
            const double best = cuts[win](i, j);
            if (op == MergeOp::Max ? v > best : v < best) win = c;
          }
          out[win](i, j) = upstream(i, j);
        }
      break;
    }
    case MergeOp::Product: {
      for (std::size_t c = 0; c < k; ++c) {
        Eigen::MatrixXd others = Eigen::MatrixXd::Ones(rows, width);
        for (std::size_t o = 0; o < k; ++o)
          if (o != c) others = others.cwiseProduct(cuts[o]);
        out.push_back(upstream.cwiseProduct(others));
      }
      break;
    }
  }
  return out;
}

SplitNnModel SplitNnModel::init(const Topology& topo) {
  SplitNnModel m;
  for (const auto& b : topo.bottoms) m.bottoms.emplace_back(b);
  m.top = nn::Mlp(topo.top);
  m.merge = topo.merge;
  return m;
}

nlohmann::json SplitNnModel::to_json() const {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& m : bottoms) b.push_back(m.to_json());
  return {{"merge", to_string(merge)}, {"bottoms", b}, {"top", top.to_json()}};
}

namespace {

constexpr std::string_view kSchedule = "schedule";
constexpr std::string_view kForward = "forward";
constexpr std::string_view kServer = "server";
constexpr std::string_view kBackward = "backward";

void write_matrix(ByteWriter& w, const Eigen::MatrixXd& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

Eigen::MatrixXd read_matrix(ByteReader& r) {
  const auto rows = r.u32();
  const auto cols = r.u32();
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  if (!m.allFinite()) throw TrainingError("non-finite values in a cut tensor");
  return m;
}

class Client final : public fed::Party {
 public:
  Client(int id, int server, const Eigen::MatrixXd& x, nn::Mlp bottom, double lr)
      : id_(id), server_(server), x_(x), bottom_(std::move(bottom)), lr_(lr) {}

  std::string name() const override { return fmt::format("client{}", id_); }
  std::string state() const override { return fmt::format("epoch batches left {}", batches_.size() - next_); }

  void act(std::string_view step, Channel& ch) override {
    if (step == kForward) {
      if (next_ == batches_.size()) receive_schedule(ch);
      const auto& rows = batches_[next_];
      fp_ = bottom_.forward(nn::gather_rows(x_, rows));
      auto scope = ch.phase(Phase::Transfer);
      ByteWriter w;
      w.u32(static_cast<std::uint32_t>(id_));
      w.u32(static_cast<std::uint32_t>(next_));
      write_matrix(w, fp_.output());
      ch.send(server_, FrameKind::CutForward, w.take());
    } else if (step == kBackward) {
      const auto msg = ch.receive(FrameKind::CutBackward, server_);
      Eigen::MatrixXd grad;
      {
        auto scope = ch.phase(Phase::Transfer);
        ByteReader r(msg.payload);
        if (static_cast<int>(r.u32()) != id_ || r.u32() != next_) throw ProtocolError("cut gradient for the wrong batch");
        grad = read_matrix(r);
      }
      if (grad.rows() != fp_.output().rows() || grad.cols() != fp_.output().cols())
        throw ProtocolError("cut gradient shape does not match the forward cut");
      bottom_.apply_sgd(bottom_.backward(fp_, grad).grads, lr_);
      ++next_;
    } else {
      throw ProtocolError(fmt::format("client has no step '{}'", step));
    }
  }

  const nn::Mlp& bottom() const { return bottom_; }

 private:
  void receive_schedule(Channel& ch) {
    const auto msg = ch.receive(FrameKind::BatchSchedule, server_);
    ByteReader r(msg.payload);
    batches_.assign(r.u32(), {});
    for (auto& b : batches_) {
      b.resize(r.u32());
      for (auto& i : b) {
        i = r.i32();
        if (i < 0 || i >= x_.rows()) throw ProtocolError("batch schedule names an unknown row");
      }
    }
    next_ = 0;
  }

  int id_;
  int server_;
  const Eigen::MatrixXd& x_;
  nn::Mlp bottom_;
  double lr_;
  std::vector<std::vector<int>> batches_;
  std::size_t next_ = 0;
  nn::ForwardPass fp_;
};

class Server final : public fed::Party {
 public:
  Server(int clients, std::size_t rows, const Labels& y, nn::Mlp top, MergeOp op, const nn::TrainConfig& cfg)
      : clients_(clients), rows_(rows), y_(y), top_(std::move(top)), op_(op), cfg_(cfg) {}

  std::string name() const override { return "server"; }
  std::string state() const override { return fmt::format("epoch {}, batch {}", epoch_, next_); }

  void act(std::string_view step, Channel& ch) override {
    if (step == kSchedule) {
      batches_ = nn::batch_schedule(rows_, cfg_, epoch_);
      next_ = 0;
      epoch_total_ = 0.0;
      ByteWriter w;
      w.u32(static_cast<std::uint32_t>(batches_.size()));
      for (const auto& b : batches_) {
        w.u32(static_cast<std::uint32_t>(b.size()));
        for (int i : b) w.i32(i);
      }
      ch.broadcast(FrameKind::BatchSchedule, w.take());
    } else if (step == kServer) {
      train_batch(ch);
    } else {
      throw ProtocolError(fmt::format("server has no step '{}'", step));
    }
  }

  const nn::Mlp& top() const { return top_; }
  const std::vector<double>& epoch_loss() const { return epoch_loss_; }
  const Eigen::MatrixXd& last_logits() const { return logits_; }
  double last_loss() const { return loss_; }
  const std::vector<int>& last_rows() const { return batches_[next_ - 1]; }

 private:
  void train_batch(Channel& ch) {
    const auto& rows = batches_.at(next_);
    std::vector<Eigen::MatrixXd> cuts;
    {
      for (int c = 0; c < clients_; ++c) {
        const auto msg = ch.receive(FrameKind::CutForward, c);
        auto scope = ch.phase(Phase::Transfer);
        ByteReader r(msg.payload);
        if (static_cast<int>(r.u32()) != c || r.u32() != next_) throw ProtocolError("cut from the wrong batch");
        cuts.push_back(read_matrix(r));
        if (static_cast<std::size_t>(cuts.back().rows()) != rows.size()) throw ProtocolError("cut has the wrong batch size");
      }
    }
    const auto merged = merge(cuts, op_);
    const auto fp = top_.forward(merged);
    const auto lg = nn::softmax_cross_entropy(fp.output(), nn::gather(y_, rows));
    if (!std::isfinite(lg.loss))
      throw TrainingError(fmt::format("non-finite loss at epoch {} batch {} (lr={})", epoch_, next_, cfg_.learning_rate));
    logits_ = fp.output();
    loss_ = lg.loss;
    epoch_total_ += lg.loss * static_cast<double>(rows.size());
    const auto back = top_.backward(fp, lg.grad);
    const auto parts = merge_backward(back.input_grad, op_, cuts);
    top_.apply_sgd(back.grads, cfg_.learning_rate);
    {
      auto scope = ch.phase(Phase::Transfer);
      for (int c = 0; c < clients_; ++c) {
        ByteWriter w;
        w.u32(static_cast<std::uint32_t>(c));
        w.u32(static_cast<std::uint32_t>(next_));
        write_matrix(w, parts[static_cast<std::size_t>(c)]);
        ch.send(c, FrameKind::CutBackward, w.take());
      }
    }
    ++next_;
    if (next_ == batches_.size()) {
      epoch_loss_.push_back(rows_ > 0 ? epoch_total_ / static_cast<double>(rows_) : 0.0);
      ++epoch_;
    }
  }

  int clients_;
  std::size_t rows_;
  const Labels& y_;
  nn::Mlp top_;
  MergeOp op_;
  nn::TrainConfig cfg_;
  std::vector<std::vector<int>> batches_;
  std::size_t next_ = 0;
  int epoch_ = 0;
  double epoch_total_ = 0.0;
  std::vector<double> epoch_loss_;
  Eigen::MatrixXd logits_;
  double loss_ = 0.0;
};

}  // namespace

TrainResult train_splitnn(std::span<const Eigen::MatrixXd> client_x, const Labels& labels, const Topology& topo,
                          const fed::RunOptions& options, std::optional<SplitNnModel> initial,
                          const BatchObserver& observer) {
  std::vector<int> widths;
  for (const auto& x : client_x) widths.push_back(static_cast<int>(x.cols()));
  topo.validate(widths);
  const auto n = client_x.front().rows();
  for (const auto& x : client_x)
    if (x.rows() != n) throw ConfigError("row misalignment: client slices have different row counts");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ConfigError("row misalignment: label count differs");
  for (int v : labels)
    if (v < 0 || v >= topo.top.output_width()) throw ConfigError("label outside the top model's output width");

  SplitNnModel start = initial ? std::move(*initial) : SplitNnModel::init(topo);
  if (start.bottoms.size() != client_x.size()) throw ConfigError("initial model has the wrong number of bottoms");
  start.merge = topo.merge;

  const int k = static_cast<int>(client_x.size());
  std::vector<std::unique_ptr<Client>> clients;
  for (int c = 0; c < k; ++c)
    clients.push_back(std::make_unique<Client>(c, k, client_x[static_cast<std::size_t>(c)],
                                               start.bottoms[static_cast<std::size_t>(c)], topo.train.learning_rate));
  Server server(k, static_cast<std::size_t>(n), labels, start.top, topo.merge, topo.train);
  std::vector<fed::Party*> parties;
  for (auto& c : clients) parties.push_back(c.get());
  parties.push_back(&server);

  std::vector<int> client_ids(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) client_ids[static_cast<std::size_t>(c)] = c;
  const std::vector<int> server_id{k};

  fed::Schedule schedule;
  struct BatchRef {
    int epoch;
    int batch;
  };
  std::map<std::size_t, BatchRef> backward_steps;
  const auto batches_per_epoch = static_cast<int>((n + topo.train.batch_size - 1) / topo.train.batch_size);
  for (int e = 0; e < topo.train.epochs; ++e) {
    schedule.push_back({std::string(kSchedule), server_id});
    for (int b = 0; b < batches_per_epoch; ++b) {
      schedule.push_back({std::string(kForward), client_ids});
      schedule.push_back({std::string(kServer), server_id});
      backward_steps[schedule.size()] = {e, b};
      schedule.push_back({std::string(kBackward), client_ids});
    }
  }

  fed::RunOptions opts = options;
  if (observer) {
    opts.after_step = [&, user = options.after_step](std::size_t step) {
      if (user) user(step);
      const auto it = backward_steps.find(step);
      if (it == backward_steps.end()) return;
      SplitNnModel snap;
      for (const auto& c : clients) snap.bottoms.push_back(c->bottom());
      snap.top = server.top();
      snap.merge = topo.merge;
      observer(BatchTrace{it->second.epoch, it->second.batch, server.last_rows(), server.last_logits(),
                          server.last_loss(), &snap});
    };
  }

  TrainResult out;
  out.transcript = fed::run_protocol(parties, schedule, opts);
  for (const auto& c : clients) out.model.bottoms.push_back(c->bottom());
  out.model.top = server.top();
  out.model.merge = topo.merge;
  out.epoch_loss = server.epoch_loss();
  return out;
}

Eigen::MatrixXd predict_logits(const SplitNnModel& m, std::span<const Eigen::MatrixXd> client_x) {
  if (client_x.size() != m.bottoms.size()) throw ConfigError("client count does not match the model");
  const auto rows = client_x.empty() ? 0 : client_x.front().rows();
  if (rows == 0) return Eigen::MatrixXd(0, m.top.spec().output_width());
  std::vector<Eigen::MatrixXd> cuts;
  for (std::size_t c = 0; c < client_x.size(); ++c) cuts.push_back(m.bottoms[c].forward(client_x[c]).output());
  return m.top.forward(merge(cuts, m.merge)).output();
}

Labels predict_splitnn(const SplitNnModel& m, std::span<const Eigen::MatrixXd> client_x) {
  const auto logits = predict_logits(m, client_x);
  Labels out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index k = 0;
    logits.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

}  // namespace vflab::splitnn
