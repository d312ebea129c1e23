#include "vflab/fedtree.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <memory>
#include <set>

#include "vflab/bytes.hpp"
#include "vflab/paillier.hpp"

namespace vflab::fedtree {

using fed::Channel;
using fed::FrameKind;
using fed::Phase;
using gbdt::BinIndex;
using gbdt::BinStats;
using gbdt::Gradients;
using gbdt::Histogram;
using gbdt::TreeGrowth;

void Config::validate(std::span<const int> slice_widths) const {
  params.validate();
  const int num_parties = static_cast<int>(slice_widths.size());
  if (num_parties < 1) throw ConfigError("FedTree needs at least one party");
  if (!feature_ids.empty()) {
    if (feature_ids.size() != slice_widths.size()) throw ConfigError("feature_ids must list every party");
    std::set<int> seen;
    std::size_t total = 0;
    for (std::size_t p = 0; p < feature_ids.size(); ++p) {
      if (static_cast<int>(feature_ids[p].size()) != slice_widths[p])
        throw ConfigError(fmt::format("party {} has {} columns but {} feature ids", p, slice_widths[p], feature_ids[p].size()));
      total += feature_ids[p].size();
      seen.insert(feature_ids[p].begin(), feature_ids[p].end());
    }
    if (seen.size() != total || (total > 0 && (*seen.begin() != 0 || *seen.rbegin() != static_cast<int>(total) - 1)))
      throw ConfigError("feature_ids must be a permutation of 0..F-1");
  }
  if (active_party < 0 || active_party >= num_parties)
    throw ConfigError(fmt::format("active party {} out of range for {} parties", active_party, num_parties));
  if (mode == Mode::Paillier && key_bits != 512 && key_bits != 1024 && key_bits != 2048)
    throw ConfigError(fmt::format("unsupported key size {}", key_bits));
  if (scale_bits < 8 || scale_bits > 60) throw ConfigError("scale_bits must be in [8, 60]");
}

nlohmann::json FederatedModel::to_json() const {
  nlohmann::json fm = nlohmann::json::array();
  for (const auto& f : feature_map) fm.push_back({f.party, f.slot});
  return {{"model", model.to_json()}, {"feature_map", fm}, {"slice_widths", slice_widths}};
}

BinMatrix concat_columns(std::span<const BinMatrix> slices) {
  if (slices.empty()) return {};
  Eigen::Index cols = 0;
  for (const auto& s : slices) {
    if (s.rows() != slices.front().rows()) throw ConfigError("party slices have different row counts");
    cols += s.cols();
  }
  BinMatrix out(slices.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& s : slices) {
    out.middleCols(c, s.cols()) = s;
    c += s.cols();
  }
  return out;
}

namespace {

constexpr std::string_view kSetup = "setup";
constexpr std::string_view kGradients = "gradients";
constexpr std::string_view kHistograms = "histograms";
constexpr std::string_view kSplits = "splits";
constexpr std::string_view kPartition = "partition";
constexpr std::string_view kFinalize = "finalize";

std::vector<std::uint8_t> pack_bits(const std::vector<bool>& bits) {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

std::vector<bool> unpack_bits(std::span<const std::uint8_t> b, std::size_t n) {
  if (b.size() != (n + 7) / 8) throw ProtocolError("partition bit vector has the wrong length");
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (b[i / 8] >> (i % 8)) & 1u;
  return out;
}

void put_ciphertext(ByteWriter& w, const he::Ciphertext& c, const he::PublicKey& pk) {
  const auto bytes = he::serialize(c, pk);
  for (auto b : bytes) w.u8(b);
}

std::vector<std::vector<int>> feature_ids(const Config& cfg, const std::vector<int>& widths) {
  if (!cfg.feature_ids.empty()) return cfg.feature_ids;
  std::vector<std::vector<int>> ids(widths.size());
  int next = 0;
  for (std::size_t p = 0; p < widths.size(); ++p)
    for (int s = 0; s < widths[p]; ++s) ids[p].push_back(next++);
  return ids;
}

/// Global id -> (owner, slot).
std::vector<FeatureRef> make_feature_map(const Config& cfg, const std::vector<int>& widths) {
  const auto ids = feature_ids(cfg, widths);
  int total = 0;
  for (int w : widths) total += w;
  std::vector<FeatureRef> map(static_cast<std::size_t>(total));
  for (std::size_t p = 0; p < ids.size(); ++p)
    for (std::size_t s = 0; s < ids[p].size(); ++s)
      map[static_cast<std::size_t>(ids[p][s])] = {static_cast<int>(p), static_cast<int>(s)};
  return map;
}

struct SplitEntry {
  int cls = 0;
  int pos = 0;
  int owner = 0;
  int slot = -1;             // known to the owner and the active party only
  int threshold_index = -1;  // likewise
};

/// State shared by active and passive parties: local slice, candidates and tree replicas.
class TreeParty : public fed::Party {
 public:
  TreeParty(int id, const BinMatrix& x, const Config& cfg, int num_parties)
      : id_(id), x_(x), cfg_(cfg), num_parties_(num_parties),
        index_(BinIndex::build(x, gbdt::propose_split_candidates(x))) {}

  std::string name() const override { return fmt::format("party{}", id_); }

  std::string state() const override {
    return fmt::format("round {}, {} pending splits", round_, pending_.size());
  }

 protected:
  int classes() const { return cfg_.params.num_classes; }

  void start_round() {
    std::vector<int> all(static_cast<std::size_t>(x_.rows()));
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[static_cast<std::size_t>(i)] = i;
    growth_.assign(static_cast<std::size_t>(classes()), TreeGrowth(all));
  }

  /// Whether a frontier node can possibly be split; every party evaluates this identically.
  bool splittable(const TreeGrowth::FrontierNode& n) const {
    return n.samples.size() >= 2 * static_cast<std::size_t>(cfg_.params.min_child);
  }

  std::vector<bool> route(const SplitEntry& e, int cls) const {
    const auto& samples = growth_[static_cast<std::size_t>(cls)].frontier()[static_cast<std::size_t>(e.pos)].samples;
    const double thr = index_.candidates.thresholds[static_cast<std::size_t>(e.slot)][static_cast<std::size_t>(e.threshold_index)];
    std::vector<bool> bits(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) bits[s] = x_(samples[s], e.slot) <= thr;
    return bits;
  }

  /// Splits own nodes locally and broadcasts their routing bits.
  void publish_own_partitions(Channel& ch) {
    ByteWriter w;
    std::uint32_t count = 0;
    for (const auto& e : pending_)
      if (e.owner == id_) ++count;
    if (count == 0) return;
    w.u32(count);
    for (const auto& e : pending_) {
      if (e.owner != id_) continue;
      auto bits = route(e, e.cls);
      w.u32(static_cast<std::uint32_t>(e.cls));
      w.u32(static_cast<std::uint32_t>(e.pos));
      w.bytes(pack_bits(bits));
      own_bits_.push_back(std::move(bits));
    }
    ch.broadcast(FrameKind::PartitionBits, w.take());
  }

  /// Applies the splits decided at the previous depth and moves every tree one level down.
  void apply_pending(Channel& ch) {
    if (!applied_) {
      std::map<int, std::vector<std::vector<bool>>> received;
      std::set<int> owners;
      for (const auto& e : pending_)
        if (e.owner != id_) owners.insert(e.owner);
      for (int owner : owners) {
        const auto msg = ch.receive(FrameKind::PartitionBits, owner);
        ByteReader r(msg.payload);
        const auto count = r.u32();
        auto& list = received[owner];
        for (std::uint32_t c = 0; c < count; ++c) {
          const int cls = static_cast<int>(r.u32());
          const int pos = static_cast<int>(r.u32());
          const auto& node = growth_.at(static_cast<std::size_t>(cls)).frontier().at(static_cast<std::size_t>(pos));
          list.push_back(unpack_bits(r.bytes(), node.samples.size()));
        }
      }
      std::map<int, std::size_t> next;
      std::size_t own = 0;
      for (const auto& e : pending_) {
        const auto& bits = e.owner == id_ ? own_bits_.at(own++) : received[e.owner].at(next[e.owner]++);
        const auto feature = global_feature(e);
        const double thr = threshold_of(e);
        growth_[static_cast<std::size_t>(e.cls)].split(static_cast<std::size_t>(e.pos), feature, thr, bits);
      }
      for (auto& g : growth_) g.advance();
    }
    pending_.clear();
    own_bits_.clear();
    applied_ = true;
  }

  /// Passive replicas do not know other parties' split features; they only route samples.
  virtual int global_feature(const SplitEntry&) const { return 0; }
  virtual double threshold_of(const SplitEntry&) const { return 0.0; }

  int id_;
  const BinMatrix& x_;
  const Config& cfg_;
  int num_parties_;
  BinIndex index_;
  std::vector<TreeGrowth> growth_;
  std::vector<SplitEntry> pending_;
  std::vector<std::vector<bool>> own_bits_;
  bool applied_ = true;
  int round_ = 0;
};

// ---------------------------------------------------------------------------

class PassiveParty final : public TreeParty {
 public:
  using TreeParty::TreeParty;

  void act(std::string_view step, Channel& ch) override {
    if (step == kSetup) {
      setup(ch);
    } else if (step == kGradients) {
      start_round();
      have_grads_ = false;
    } else if (step == kHistograms) {
      apply_pending(ch);
      if (!have_grads_) receive_gradients(ch);
      send_histograms(ch);
    } else if (step == kPartition) {
      receive_instructions(ch);
    } else if (step == kFinalize) {
      apply_pending(ch);
      ++round_;
    } else {
      throw ProtocolError(fmt::format("passive party has no step '{}'", step));
    }
  }

 private:
  void setup(Channel& ch) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(index_.candidates.num_features()));
    for (const auto& t : index_.candidates.thresholds) w.f64_array(t);
    ch.send(cfg_.active_party, FrameKind::SplitCandidates, w.take());
  }

  bool encrypted() const { return cfg_.mode == Mode::Paillier; }

  void receive_gradients(Channel& ch) {
    if (encrypted() && !pk_) {
      const auto msg = ch.receive(FrameKind::PublicKey, cfg_.active_party);
      pk_ = he::deserialize_public_key(msg.payload);
    }
    const auto msg = ch.receive(encrypted() ? FrameKind::GradientsCipher : FrameKind::GradientsPlain, cfg_.active_party);
    auto scope = ch.phase(Phase::Transfer);
    ByteReader r(msg.payload);
    const int n = static_cast<int>(r.u32());
    const int k = static_cast<int>(r.u32());
    if (n != x_.rows() || k != classes()) throw ProtocolError("gradient frame shape does not match local data");
    if (encrypted()) {
      const auto width = he::serialized_size(*pk_);
      const auto blob = r.bytes();
      if (blob.size() != width * 2 * static_cast<std::size_t>(n) * static_cast<std::size_t>(k))
        throw ProtocolError("encrypted gradient frame has the wrong length");
      enc_.resize(blob.size() / width);
      for (std::size_t c = 0; c < enc_.size(); ++c) enc_[c] = he::deserialize(blob.subspan(c * width, width), *pk_);
    } else {
      plain_ = Gradients{n, k, std::vector<gbdt::GradientPair>(static_cast<std::size_t>(n) * k)};
      for (auto& p : plain_.pairs) {
        p.g = r.f64();
        p.h = r.f64();
      }
    }
    have_grads_ = true;
  }

  void send_histograms(Channel& ch) {
    ByteWriter w;
    const auto nf = index_.candidates.num_features();
    w.u32(static_cast<std::uint32_t>(classes()));
    for (int k = 0; k < classes(); ++k) {
      const auto& frontier = growth_[static_cast<std::size_t>(k)].frontier();
      w.u32(static_cast<std::uint32_t>(frontier.size()));
      for (const auto& node : frontier) {
        if (!splittable(node)) continue;
        if (encrypted()) {
          write_encrypted_hist(w, k, node.samples, nf);
        } else {
          const Histogram h = gbdt::compute_hist(plain_, k, node.samples, index_);
          for (const auto& bins : h.features)
            for (const auto& b : bins) {
              w.f64(b.g);
              w.f64(b.h);
              w.u64(static_cast<std::uint64_t>(b.count));
            }
        }
      }
    }
    ch.send(cfg_.active_party, encrypted() ? FrameKind::HistogramCipher : FrameKind::HistogramPlain, w.take());
  }

  void write_encrypted_hist(ByteWriter& w, int k, const std::vector<int>& samples, std::size_t nf) {
    const auto& pk = *pk_;
    for (std::size_t j = 0; j < nf; ++j) {
      const auto bins = static_cast<std::size_t>(index_.bins_of(j));
      std::vector<he::Ciphertext> g(bins, he::Ciphertext{1, cfg_.scale_bits, pk.fingerprint});
      std::vector<he::Ciphertext> h = g;
      std::vector<std::uint64_t> count(bins, 0);
      const auto col = index_.bin.col(static_cast<Eigen::Index>(j));
      for (int i : samples) {
        const auto b = col(i);
        const auto base = (static_cast<std::size_t>(i) * static_cast<std::size_t>(classes()) + static_cast<std::size_t>(k)) * 2;
        he::add_into(pk, g[b], enc_[base]);
        he::add_into(pk, h[b], enc_[base + 1]);
        ++count[b];
      }
      for (std::size_t b = 0; b < bins; ++b) {
        put_ciphertext(w, g[b], pk);
        put_ciphertext(w, h[b], pk);
        w.u64(count[b]);
      }
    }
  }

  void receive_instructions(Channel& ch) {
    const auto msg = ch.receive(FrameKind::SplitInstruction, cfg_.active_party);
    ByteReader r(msg.payload);
    const auto count = r.u32();
    pending_.clear();
    for (std::uint32_t c = 0; c < count; ++c) {
      SplitEntry e;
      e.cls = static_cast<int>(r.u32());
      e.pos = static_cast<int>(r.u32());
      e.owner = static_cast<int>(r.u32());
      e.slot = r.i32();
      e.threshold_index = r.i32();
      if (e.owner == id_ && (e.slot < 0 || e.slot >= x_.cols())) throw ProtocolError("split instruction names an invalid slot");
      pending_.push_back(e);
    }
    applied_ = false;
    publish_own_partitions(ch);
  }

  std::optional<he::PublicKey> pk_;
  std::vector<he::Ciphertext> enc_;  // [(i * K + k) * 2 + {0: g, 1: h}]
  Gradients plain_;
  bool have_grads_ = false;
};

// ---------------------------------------------------------------------------

class ActiveParty final : public TreeParty {
 public:
  ActiveParty(int id, const BinMatrix& x, const Labels& y, const Config& cfg, int num_parties,
              std::span<const BinMatrix> all_slices)
      : TreeParty(id, x, cfg, num_parties), y_(y) {
    for (const auto& s : all_slices) widths_.push_back(static_cast<int>(s.cols()));
    model_.params = cfg.params;
    model_.base_score = gbdt::prior_scores(y, cfg.params.num_classes);
    scores_.resize(x.rows(), cfg.params.num_classes);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int k = 0; k < cfg.params.num_classes; ++k) scores_(i, k) = model_.base_score[static_cast<std::size_t>(k)];
  }

  void act(std::string_view step, Channel& ch) override {
    if (step == kSetup) {
      if (cfg_.mode == Mode::Paillier) {
        keys_ = he::keygen(cfg_.key_bits, cfg_.key_seed);
        encryptor_ = std::make_unique<he::Encryptor>(keys_->pub, cfg_.encrypt_seed, cfg_.scale_bits);
        ch.broadcast(FrameKind::PublicKey, he::serialize_public_key(keys_->pub));
      }
    } else if (step == kGradients) {
      collect_candidates(ch);
      start_round();
      grads_ = gbdt::update_gradients(y_, scores_);
      if (cfg_.params.max_depth > 0 && num_parties_ > 1) broadcast_gradients(ch);
    } else if (step == kHistograms) {
      apply_pending(ch);
      local_hists();
    } else if (step == kSplits) {
      decide_splits(ch);
    } else if (step == kFinalize) {
      apply_pending(ch);
      finish_round();
    } else {
      throw ProtocolError(fmt::format("active party has no step '{}'", step));
    }
  }

  FederatedModel result() const {
    FederatedModel m;
    m.model = model_;
    m.model.num_features = static_cast<int>(feature_map_.size());
    m.feature_map = feature_map_;
    m.slice_widths = widths_;
    return m;
  }

 private:
  void collect_candidates(Channel& ch) {
    if (!candidates_.empty()) return;
    candidates_.resize(static_cast<std::size_t>(num_parties_));
    for (int p = 0; p < num_parties_; ++p) {
      if (p == id_) {
        candidates_[static_cast<std::size_t>(p)] = index_.candidates;
        continue;
      }
      const auto msg = ch.receive(FrameKind::SplitCandidates, p);
      ByteReader r(msg.payload);
      const auto nf = r.u32();
      if (static_cast<int>(nf) != widths_[static_cast<std::size_t>(p)]) throw ProtocolError("candidate count mismatch");
      auto& c = candidates_[static_cast<std::size_t>(p)];
      for (std::uint32_t j = 0; j < nf; ++j) c.thresholds.push_back(r.f64_array());
    }
    feature_map_ = make_feature_map(cfg_, widths_);
    global_.thresholds.clear();
    for (const auto& ref : feature_map_)
      global_.thresholds.push_back(
          candidates_[static_cast<std::size_t>(ref.party)].thresholds[static_cast<std::size_t>(ref.slot)]);
    ids_ = feature_ids(cfg_, widths_);
  }

  void broadcast_gradients(Channel& ch) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(grads_.rows));
    w.u32(static_cast<std::uint32_t>(grads_.classes));
    if (cfg_.mode == Mode::Paillier) {
      std::vector<he::Ciphertext> cs;
      cs.reserve(grads_.pairs.size() * 2);
      {
        auto scope = ch.phase(Phase::Encrypt);
        for (const auto& p : grads_.pairs) {
          cs.push_back(encryptor_->encrypt(p.g));
          cs.push_back(encryptor_->encrypt(p.h));
        }
      }
      auto scope = ch.phase(Phase::Transfer);
      const auto width = he::serialized_size(keys_->pub);
      std::vector<std::uint8_t> blob;
      blob.reserve(width * cs.size());
      for (const auto& c : cs) {
        const auto b = he::serialize(c, keys_->pub);
        blob.insert(blob.end(), b.begin(), b.end());
      }
      w.bytes(blob);
      ch.broadcast(FrameKind::GradientsCipher, w.take());
    } else {
      auto scope = ch.phase(Phase::Transfer);
      for (const auto& p : grads_.pairs) {
        w.f64(p.g);
        w.f64(p.h);
      }
      ch.broadcast(FrameKind::GradientsPlain, w.take());
    }
  }

  void local_hists() {
    own_hists_.assign(static_cast<std::size_t>(classes()), {});
    for (int k = 0; k < classes(); ++k)
      for (const auto& node : growth_[static_cast<std::size_t>(k)].frontier())
        own_hists_[static_cast<std::size_t>(k)].push_back(
            splittable(node) ? gbdt::compute_hist(grads_, k, node.samples, index_) : Histogram{});
  }

  /// Reads one passive party's histogram frame into per-(class, node) feature bins.
  std::vector<std::vector<std::vector<std::vector<BinStats>>>> read_hists(Channel& ch, int p) {
    const bool enc = cfg_.mode == Mode::Paillier;
    const auto msg = ch.receive(enc ? FrameKind::HistogramCipher : FrameKind::HistogramPlain, p);
    ByteReader r(msg.payload);
    const auto& cand = candidates_[static_cast<std::size_t>(p)];
    const std::size_t width = enc ? he::serialized_size(keys_->pub) : 0;
    auto read_value = [&]() -> double {
      if (!enc) return r.f64();
      std::vector<std::uint8_t> buf(width);
      for (auto& b : buf) b = r.u8();
      he::Ciphertext c;
      {
        auto scope = ch.phase(Phase::Transfer);
        c = he::deserialize(buf, keys_->pub);
      }
      auto scope = ch.phase(Phase::Decrypt);
      return he::decrypt(*keys_, c);
    };
    std::vector<std::vector<std::vector<std::vector<BinStats>>>> out(static_cast<std::size_t>(classes()));
    if (static_cast<int>(r.u32()) != classes()) throw ProtocolError("histogram frame class count mismatch");
    for (int k = 0; k < classes(); ++k) {
      const auto& frontier = growth_[static_cast<std::size_t>(k)].frontier();
      if (r.u32() != frontier.size()) throw ProtocolError("histogram frame node count mismatch");
      auto& per_node = out[static_cast<std::size_t>(k)];
      per_node.resize(frontier.size());
      for (std::size_t pos = 0; pos < frontier.size(); ++pos) {
        if (!splittable(frontier[pos])) continue;
        auto& feats = per_node[pos];
        feats.resize(cand.num_features());
        for (std::size_t j = 0; j < cand.num_features(); ++j) {
          feats[j].resize(cand.thresholds[j].size() + 1);
          for (auto& b : feats[j]) {
            b.g = read_value();
            b.h = read_value();
            b.count = static_cast<std::int64_t>(r.u64());
          }
        }
      }
    }
    if (!r.done()) throw ProtocolError("histogram frame has trailing bytes");
    return out;
  }

  void decide_splits(Channel& ch) {
    std::vector<std::vector<std::vector<std::vector<std::vector<BinStats>>>>> remote(static_cast<std::size_t>(num_parties_));
    for (int p = 0; p < num_parties_; ++p)
      if (p != id_) remote[static_cast<std::size_t>(p)] = read_hists(ch, p);

    pending_.clear();
    for (int k = 0; k < classes(); ++k) {
      const auto& frontier = growth_[static_cast<std::size_t>(k)].frontier();
      for (std::size_t pos = 0; pos < frontier.size(); ++pos) {
        if (!splittable(frontier[pos])) continue;
        // Union of per-party histograms in global feature order.
        Histogram h;
        h.total = gbdt::node_totals(grads_, k, frontier[pos].samples);
        for (const auto& ref : feature_map_) {
          auto& src = ref.party == id_ ? own_hists_[static_cast<std::size_t>(k)][pos].features
                                       : remote[static_cast<std::size_t>(ref.party)][static_cast<std::size_t>(k)][pos];
          h.features.push_back(std::move(src[static_cast<std::size_t>(ref.slot)]));
        }
        const auto d = gbdt::best_split(h, global_, cfg_.params);
        if (!d) continue;
        const auto ref = feature_map_[static_cast<std::size_t>(d->feature)];
        pending_.push_back({k, static_cast<int>(pos), ref.party, ref.slot, d->threshold_index});
      }
    }

    for (int p = 0; p < num_parties_; ++p) {
      if (p == id_) continue;
      ByteWriter w;
      w.u32(static_cast<std::uint32_t>(pending_.size()));
      for (const auto& e : pending_) {
        w.u32(static_cast<std::uint32_t>(e.cls));
        w.u32(static_cast<std::uint32_t>(e.pos));
        w.u32(static_cast<std::uint32_t>(e.owner));
        w.i32(e.owner == p ? e.slot : -1);
        w.i32(e.owner == p ? e.threshold_index : -1);
      }
      ch.send(p, FrameKind::SplitInstruction, w.take());
    }
    applied_ = false;
    publish_own_partitions(ch);
  }

  int global_feature(const SplitEntry& e) const override {
    return ids_[static_cast<std::size_t>(e.owner)][static_cast<std::size_t>(e.slot)];
  }

  double threshold_of(const SplitEntry& e) const override {
    return global_.thresholds[static_cast<std::size_t>(global_feature(e))][static_cast<std::size_t>(e.threshold_index)];
  }

  void finish_round() {
    std::vector<gbdt::Tree> round;
    for (int k = 0; k < classes(); ++k) {
      auto& g = growth_[static_cast<std::size_t>(k)];
      round.push_back(g.finish(grads_, k, cfg_.params.lambda));
      for (const auto& leaf : g.leaves()) {
        const double w = round.back().nodes[static_cast<std::size_t>(leaf.node_id)].weight;
        for (int i : leaf.samples) scores_(i, k) += cfg_.params.learning_rate * w;
      }
    }
    model_.trees.push_back(std::move(round));
    ++round_;
  }

  const Labels& y_;
  std::vector<int> widths_;
  std::vector<std::vector<int>> ids_;
  std::vector<gbdt::SplitCandidates> candidates_;
  gbdt::SplitCandidates global_;
  std::vector<FeatureRef> feature_map_;
  std::optional<he::KeyPair> keys_;
  std::unique_ptr<he::Encryptor> encryptor_;
  Gradients grads_;
  Eigen::MatrixXd scores_;
  std::vector<std::vector<Histogram>> own_hists_;
  gbdt::GbdtModel model_;
};

fed::Schedule make_schedule(const Config& cfg, int num_parties) {
  std::vector<int> everyone(static_cast<std::size_t>(num_parties));
  std::vector<int> passives;
  for (int p = 0; p < num_parties; ++p) {
    everyone[static_cast<std::size_t>(p)] = p;
    if (p != cfg.active_party) passives.push_back(p);
  }
  const std::vector<int> active{cfg.active_party};

  fed::Schedule s;
  s.push_back({std::string(kSetup), everyone});
  for (int t = 0; t < cfg.params.n_trees; ++t) {
    s.push_back({std::string(kGradients), everyone});
    for (int d = 0; d < cfg.params.max_depth; ++d) {
      s.push_back({std::string(kHistograms), everyone});
      s.push_back({std::string(kSplits), active});
      if (!passives.empty()) s.push_back({std::string(kPartition), passives});
    }
    s.push_back({std::string(kFinalize), everyone});
  }
  return s;
}

}  // namespace

TrainResult train_fedtree(std::span<const BinMatrix> slices, const Labels& labels, const Config& cfg,
                          const fed::RunOptions& options) {
  const int parties = static_cast<int>(slices.size());
  std::vector<int> widths;
  for (const auto& s : slices) widths.push_back(static_cast<int>(s.cols()));
  cfg.validate(widths);
  for (const auto& s : slices)
    if (s.rows() != slices.front().rows())
      throw ConfigError(fmt::format("row misalignment: party slices have {} and {} rows", slices.front().rows(), s.rows()));
  if (static_cast<Eigen::Index>(labels.size()) != slices.front().rows())
    throw ConfigError("row misalignment: label count differs from slice rows");
  for (int v : labels)
    if (v < 0 || v >= cfg.params.num_classes) throw ConfigError("label outside [0, num_classes)");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) throw ConfigError("training data contains a single class");

  std::vector<std::unique_ptr<fed::Party>> owned;
  ActiveParty* active = nullptr;
  for (int p = 0; p < parties; ++p) {
    if (p == cfg.active_party) {
      auto a = std::make_unique<ActiveParty>(p, slices[static_cast<std::size_t>(p)], labels, cfg, parties, slices);
      active = a.get();
      owned.push_back(std::move(a));
    } else {
      owned.push_back(std::make_unique<PassiveParty>(p, slices[static_cast<std::size_t>(p)], cfg, parties));
    }
  }
  std::vector<fed::Party*> ptrs;
  for (auto& p : owned) ptrs.push_back(p.get());

  TrainResult out;
  out.transcript = fed::run_protocol(ptrs, make_schedule(cfg, parties), options);
  out.model = active->result();
  if (cfg.params.n_trees == 0) {
    // No round ran, so the candidate exchange never happened; the map is still well defined.
    out.model.feature_map = make_feature_map(cfg, widths);
    out.model.model.num_features = static_cast<int>(out.model.feature_map.size());
  }
  return out;
}

Eigen::MatrixXd predict_margin_federated(const FederatedModel& m, std::span<const BinMatrix> slices) {
  if (slices.size() != m.slice_widths.size()) throw ConfigError("party count does not match the model");
  for (std::size_t p = 0; p < slices.size(); ++p)
    if (slices[p].rows() != slices.front().rows() || slices[p].cols() != m.slice_widths[p])
      throw ConfigError(fmt::format("slice {} does not match the model's layout", p));
  const Eigen::Index n = slices.empty() ? 0 : slices.front().rows();
  const int k = m.model.params.num_classes;
  Eigen::MatrixXd out(n, k);
  std::vector<double> row(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    m.model.accumulate_row(
        [&](int f) {
          const auto& ref = m.feature_map[static_cast<std::size_t>(f)];
          return static_cast<double>(slices[static_cast<std::size_t>(ref.party)](i, ref.slot));
        },
        row);
    for (int c = 0; c < k; ++c) out(i, c) = row[static_cast<std::size_t>(c)];
  }
  return out;
}

Labels predict_federated(const FederatedModel& m, std::span<const BinMatrix> slices) {
  return gbdt::argmax_rows(predict_margin_federated(m, slices));
}

}  // namespace vflab::fedtree
