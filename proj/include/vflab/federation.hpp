#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"

namespace vflab::fed {

using PartyId = int;

enum class FrameKind : std::uint8_t {
  PublicKey,
  SplitCandidates,
  GradientsPlain,
  GradientsCipher,
  HistogramPlain,
  HistogramCipher,
  SplitInstruction,
  PartitionBits,
  BatchSchedule,
  CutForward,
  CutBackward,
  RawFeatures,  // never emitted by shipped protocols; exists so audits can be tested
  Labels,
};

std::string_view kind_name(FrameKind k);
/// Plaintext frames whose content is computed from the labels.
bool is_label_derived_plaintext(FrameKind k);

enum class Phase : std::uint8_t { Encrypt, Decrypt, Transfer };

struct Message {
  std::uint64_t seq = 0;  // per sender, strictly increasing
  PartyId sender = 0;
  PartyId receiver = 0;
  FrameKind kind = FrameKind::PublicKey;
  std::vector<std::uint8_t> payload;  // empty in the transcript when payloads are elided
  std::size_t size = 0;               // payload bytes, always exact
  std::size_t step = 0;
  double timestamp = 0.0;             // seconds since the start of the run
};

struct PartyTiming {
  double busy = 0.0;  // CPU seconds spent inside act()
  double encrypt = 0.0;
  double decrypt = 0.0;
  double transfer = 0.0;

  double compute() const { return busy - encrypt - decrypt - transfer; }
};

struct Transcript {
  std::vector<std::string> party_names;
  std::vector<Message> messages;
  std::map<FrameKind, std::uint64_t> bytes_by_kind;
  std::map<std::pair<PartyId, PartyId>, std::uint64_t> bytes_by_direction;
  std::uint64_t total_bytes = 0;
  std::vector<PartyTiming> timing;
  double wall_seconds = 0.0;
  /// Sum over steps of the slowest actor: elapsed time if every party had its own machine.
  double critical_path_seconds = 0.0;
  /// critical_path_seconds split by step name.
  std::map<std::string, double> critical_path_by_step;
  /// CPU time of the slowest actor, per executed step.
  std::vector<double> step_seconds;
  std::size_t steps = 0;

  double encrypt_seconds() const;
  double decrypt_seconds() const;
  double busy_seconds() const;
  std::size_t count(FrameKind k) const;
  bool totals_reconcile() const;

  /// One JSON object per message header; payloads hex-encoded when requested and kept.
  void write_jsonl(std::ostream& out, bool include_payloads = false) const;
  nlohmann::json summary() const;
};

class Runtime;

/// Records the CPU time of a protocol phase for the owning party.
class PhaseScope {
 public:
  PhaseScope(Runtime& rt, PartyId party, Phase phase);
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;
  ~PhaseScope();

 private:
  Runtime& rt_;
  PartyId party_;
  Phase phase_;
  double start_;
};

/// A party's view of the bus during one step. Messages sent in step s are delivered at the
/// barrier ending s and become receivable in s+1.
class Channel {
 public:
  Channel(Runtime& rt, PartyId self) : rt_(rt), self_(self) {}

  PartyId self() const { return self_; }
  int num_parties() const;

  void send(PartyId to, FrameKind kind, std::vector<std::uint8_t> payload);
  /// Sends a copy to every other party.
  void broadcast(FrameKind kind, const std::vector<std::uint8_t>& payload);
  /// Oldest pending message of `kind` from `from`; throws ProtocolError if none is pending.
  Message receive(FrameKind kind, PartyId from);
  bool has_pending(FrameKind kind, PartyId from) const;

  [[nodiscard]] PhaseScope phase(Phase p) { return PhaseScope(rt_, self_, p); }

 private:
  Runtime& rt_;
  PartyId self_;
};

class Party {
 public:
  virtual ~Party() = default;
  virtual std::string name() const = 0;
  virtual void act(std::string_view step, Channel& ch) = 0;
  /// Short human-readable state for deadlock dumps.
  virtual std::string state() const { return {}; }
};

struct Step {
  std::string name;
  std::vector<PartyId> actors;
};

using Schedule = std::vector<Step>;

enum class ExecutionMode { Lockstep, Threaded };

struct RunOptions {
  ExecutionMode mode = ExecutionMode::Lockstep;
  bool keep_payloads = true;
  /// Called after each step's barrier with the step index.
  std::function<void(std::size_t)> after_step;
};

/// Executes `schedule` step by step with a barrier after each step and returns the transcript.
Transcript run_protocol(std::span<Party* const> parties, const Schedule& schedule, const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Locality audit

struct LocalityPolicy {
  PartyId label_holder = 0;
  /// Gradient and histogram frames must be ciphertext (HE mode).
  bool require_encrypted = false;
};

struct RuleResult {
  std::string rule;
  bool passed = true;
  std::string detail;
};

struct LocalityReport {
  std::vector<RuleResult> rules;

  bool passed() const;
  const RuleResult& rule(std::string_view name) const;
};

LocalityReport assert_locality(const Transcript& t, const LocalityPolicy& policy);

}  // namespace vflab::fed
