#include <gtest/gtest.h>

#include <sstream>

#include "random_data.hpp"
#include "vflab/fedtree.hpp"
#include "vflab/federation.hpp"

using namespace vflab;
using namespace vflab::fed;

namespace {

/// Sends one frame per step to `peer` and expects one back.
class PingParty : public Party {
 public:
  PingParty(PartyId peer, FrameKind kind, std::uint8_t tag) : peer_(peer), kind_(kind), tag_(tag) {}
  std::string name() const override { return "ping" + std::to_string(tag_); }
  void act(std::string_view step, Channel& ch) override {
    if (step == "send") ch.send(peer_, kind_, std::vector<std::uint8_t>(3, tag_));
    if (step == "recv") got_ = ch.receive(kind_, peer_).payload;
  }
  std::string state() const override { return "waiting on " + std::to_string(peer_); }
  std::vector<std::uint8_t> got_;

 private:
  PartyId peer_;
  FrameKind kind_;
  std::uint8_t tag_;
};

class SilentParty : public Party {
 public:
  std::string name() const override { return "silent"; }
  void act(std::string_view, Channel&) override {}
};

class Misrouter : public Party {
 public:
  std::string name() const override { return "misrouter"; }
  void act(std::string_view, Channel& ch) override { ch.send(7, FrameKind::SplitInstruction, {1}); }
};

class Injector : public Party {
 public:
  explicit Injector(FrameKind k) : kind_(k) {}
  std::string name() const override { return "injector"; }
  void act(std::string_view, Channel& ch) override { ch.send(1, kind_, {1, 2, 3}); }

 private:
  FrameKind kind_;
};

Transcript ping_run(ExecutionMode mode = ExecutionMode::Lockstep) {
  PingParty a(1, FrameKind::SplitInstruction, 1), b(0, FrameKind::SplitInstruction, 2);
  std::vector<Party*> ps{&a, &b};
  RunOptions o;
  o.mode = mode;
  return run_protocol(ps, {{"send", {0, 1}}, {"recv", {0, 1}}}, o);
}

}  // namespace

TEST(Runtime, EmptyScheduleGivesEmptyTranscript) {
  SilentParty a, b;
  std::vector<Party*> ps{&a, &b};
  const auto t = run_protocol(ps, {});
  EXPECT_TRUE(t.messages.empty());
  EXPECT_EQ(t.total_bytes, 0u);
  EXPECT_EQ(t.steps, 0u);
}

TEST(Runtime, DeliversAtBarrier) {
  PingParty a(1, FrameKind::SplitInstruction, 1), b(0, FrameKind::SplitInstruction, 2);
  std::vector<Party*> ps{&a, &b};
  const auto t = run_protocol(ps, {{"send", {0, 1}}, {"recv", {0, 1}}});
  EXPECT_EQ(a.got_, std::vector<std::uint8_t>(3, 2));
  EXPECT_EQ(b.got_, std::vector<std::uint8_t>(3, 1));
  ASSERT_EQ(t.messages.size(), 2u);
  EXPECT_EQ(t.messages[0].sender, 0);
  EXPECT_EQ(t.messages[1].sender, 1);
  EXPECT_EQ(t.total_bytes, 6u);
  EXPECT_TRUE(t.totals_reconcile());
}

TEST(Runtime, SameStepMessagesAreNotVisible) {
  PingParty a(1, FrameKind::SplitInstruction, 1), b(0, FrameKind::SplitInstruction, 2);
  std::vector<Party*> ps{&a, &b};
  // receiving in the step that sends must fail: delivery happens at the barrier
  EXPECT_THROW(run_protocol(ps, {{"send", {0}}, {"recv", {1}}, {"recv", {0}}}), ProtocolError);
}

TEST(Runtime, RoutingErrorForUnknownParty) {
  Misrouter m;
  SilentParty s;
  std::vector<Party*> ps{&m, &s};
  EXPECT_THROW(run_protocol(ps, {{"go", {0}}}), ProtocolError);
}

TEST(Runtime, ScheduleWithUnknownActor) {
  SilentParty s;
  std::vector<Party*> ps{&s};
  EXPECT_THROW(run_protocol(ps, {{"go", {3}}}), ProtocolError);
}

TEST(Runtime, StarvedReceiveDumpsState) {
  PingParty a(1, FrameKind::SplitInstruction, 1), b(0, FrameKind::SplitInstruction, 2);
  std::vector<Party*> ps{&a, &b};
  try {
    run_protocol(ps, {{"recv", {0}}});
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("recv"), std::string::npos) << msg;
    EXPECT_NE(msg.find("waiting on 1"), std::string::npos) << msg;
  }
}

TEST(Runtime, SequenceNumbersIncreasePerSender) {
  const auto inst = fixtures::random_instance(3, 60, 6);
  const auto slices = fixtures::split_columns(inst.x, 3, 3);
  fedtree::Config cfg;
  cfg.params.n_trees = 2;
  cfg.params.max_depth = 3;
  const auto t = fedtree::train_fedtree(slices, inst.y, cfg).transcript;
  std::map<PartyId, std::uint64_t> last;
  for (const auto& m : t.messages) {
    if (last.count(m.sender)) EXPECT_GT(m.seq, last[m.sender]);
    last[m.sender] = m.seq;
    EXPECT_EQ(m.size, m.payload.size());
  }
  EXPECT_TRUE(t.totals_reconcile());
  std::uint64_t by_kind = 0, by_dir = 0;
  for (const auto& [k, v] : t.bytes_by_kind) by_kind += v;
  for (const auto& [k, v] : t.bytes_by_direction) by_dir += v;
  EXPECT_EQ(by_kind, t.total_bytes);
  EXPECT_EQ(by_dir, t.total_bytes);
  for (const auto& tm : t.timing) {
    EXPECT_GE(tm.busy, 0);
    EXPECT_GE(tm.encrypt, 0);
    EXPECT_GE(tm.decrypt, 0);
  }
}

TEST(Runtime, ThreadedMatchesLockstep) {
  const auto a = ping_run(ExecutionMode::Lockstep), b = ping_run(ExecutionMode::Threaded);
  ASSERT_EQ(a.messages.size(), b.messages.size());
  for (std::size_t i = 0; i < a.messages.size(); ++i) {
    EXPECT_EQ(a.messages[i].payload, b.messages[i].payload);
    EXPECT_EQ(a.messages[i].sender, b.messages[i].sender);
  }
}

TEST(Runtime, ReplayReproducesPayloads) {
  const auto inst = fixtures::random_instance(9, 50, 5);
  const auto slices = fixtures::split_columns(inst.x, 2, 9);
  fedtree::Config cfg;
  cfg.params.n_trees = 1;
  cfg.params.max_depth = 2;
  cfg.mode = fedtree::Mode::Paillier;
  cfg.key_bits = 512;
  cfg.key_seed = 1;
  cfg.encrypt_seed = 2;
  const auto a = fedtree::train_fedtree(slices, inst.y, cfg).transcript;
  const auto b = fedtree::train_fedtree(slices, inst.y, cfg).transcript;
  ASSERT_EQ(a.messages.size(), b.messages.size());
  for (std::size_t i = 0; i < a.messages.size(); ++i) EXPECT_EQ(a.messages[i].payload, b.messages[i].payload) << i;
}

TEST(Runtime, FedTreeDepthOneFrameCounts) {
  // T=1, d=1, two parties, two rows
  data::BinMatrix x(2, 2);
  x << 0, 3, 3, 0;
  const Labels y{0, 1};
  const std::vector<data::BinMatrix> slices{x.leftCols(1), x.rightCols(1)};
  fedtree::Config cfg;
  cfg.params.n_trees = 1;
  cfg.params.max_depth = 1;
  cfg.params.num_classes = 2;
  const auto t = fedtree::train_fedtree(slices, y, cfg).transcript;
  // the active party keeps its own histogram, so only the passive one is sent
  EXPECT_EQ(t.count(FrameKind::GradientsPlain), 1u);
  EXPECT_EQ(t.count(FrameKind::HistogramPlain), 1u);
  EXPECT_EQ(t.count(FrameKind::HistogramCipher), 0u);
}

TEST(Transcript, JsonLinesAndSummary) {
  const auto t = ping_run();
  std::ostringstream out;
  t.write_jsonl(out, true);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("kind"), "split_instruction");
    EXPECT_TRUE(j.contains("payload"));
    ++n;
  }
  EXPECT_EQ(n, 2);
  const auto s = t.summary();
  EXPECT_EQ(s.at("total_bytes"), 6);
}

TEST(Locality, PlaintextFedTree) {
  const auto inst = fixtures::random_instance(4, 80, 6);
  const auto slices = fixtures::split_columns(inst.x, 3, 4);
  fedtree::Config cfg;
  cfg.params.n_trees = 2;
  const auto t = fedtree::train_fedtree(slices, inst.y, cfg).transcript;
  const auto r = assert_locality(t, {0, false});
  EXPECT_TRUE(r.passed());
  EXPECT_TRUE(r.rule("raw-features-confined").passed);
  EXPECT_NE(r.rule("gradients-encrypted").detail.find("plaintext"), std::string::npos);
  EXPECT_FALSE(assert_locality(t, {0, true}).passed());
}

TEST(Locality, EncryptedFedTree) {
  const auto inst = fixtures::random_instance(5, 60, 6);
  const auto slices = fixtures::split_columns(inst.x, 2, 5);
  fedtree::Config cfg;
  cfg.params.n_trees = 1;
  cfg.params.max_depth = 2;
  cfg.mode = fedtree::Mode::Paillier;
  cfg.key_bits = 512;
  cfg.key_seed = 3;
  const auto t = fedtree::train_fedtree(slices, inst.y, cfg).transcript;
  EXPECT_TRUE(assert_locality(t, {0, true}).passed());
  EXPECT_EQ(t.count(FrameKind::GradientsPlain), 0u);
  EXPECT_EQ(t.count(FrameKind::HistogramPlain), 0u);
  EXPECT_GT(t.count(FrameKind::HistogramCipher), 0u);
}

TEST(Locality, InjectedRawFeaturesFail) {
  Injector inj(FrameKind::RawFeatures);
  SilentParty s;
  std::vector<Party*> ps{&inj, &s};
  const auto t = run_protocol(ps, {{"go", {0}}});
  const auto r = assert_locality(t, {1, false});
  EXPECT_FALSE(r.passed());
  EXPECT_FALSE(r.rule("raw-features-confined").passed);
}

TEST(Locality, LabelsLeavingTheHolderFail) {
  Injector inj(FrameKind::Labels);
  SilentParty s;
  std::vector<Party*> ps{&inj, &s};
  const auto t = run_protocol(ps, {{"go", {0}}});
  EXPECT_FALSE(assert_locality(t, {0, false}).rule("labels-confined").passed);
}

TEST(Locality, LabelDerivedFromPassiveFails) {
  Injector inj(FrameKind::GradientsPlain);
  SilentParty s;
  std::vector<Party*> ps{&inj, &s};
  const auto t = run_protocol(ps, {{"go", {0}}});
  EXPECT_FALSE(assert_locality(t, {1, false}).rule("label-derived-scope").passed);
  EXPECT_TRUE(assert_locality(t, {0, false}).rule("label-derived-scope").passed);
}
