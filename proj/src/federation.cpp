#include "vflab/federation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <deque>
#include <exception>
#include <ostream>
#include <thread>

namespace vflab::fed {

std::string_view kind_name(FrameKind k) {
  switch (k) {
    case FrameKind::PublicKey: return "public_key";
    case FrameKind::SplitCandidates: return "split_candidates";
    case FrameKind::GradientsPlain: return "gradients_plain";
    case FrameKind::GradientsCipher: return "gradients_cipher";
    case FrameKind::HistogramPlain: return "histogram_plain";
    case FrameKind::HistogramCipher: return "histogram_cipher";
    case FrameKind::SplitInstruction: return "split_instruction";
    case FrameKind::PartitionBits: return "partition_bits";
    case FrameKind::BatchSchedule: return "batch_schedule";
    case FrameKind::CutForward: return "cut_forward";
    case FrameKind::CutBackward: return "cut_backward";
    case FrameKind::RawFeatures: return "raw_features";
    case FrameKind::Labels: return "labels";
  }
  return "?";
}

bool is_label_derived_plaintext(FrameKind k) {
  return k == FrameKind::GradientsPlain || k == FrameKind::HistogramPlain || k == FrameKind::CutBackward;
}

namespace {

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

}  // namespace

// ---------------------------------------------------------------------------

class Runtime {
 public:
  explicit Runtime(std::span<Party* const> parties, const RunOptions& opt)
      : parties_(parties), opt_(opt), inbox_(parties.size()), outbox_(parties.size()), seq_(parties.size(), 0) {
    transcript_.timing.resize(parties.size());
    for (auto* p : parties) transcript_.party_names.push_back(p->name());
    start_ = std::chrono::steady_clock::now();
  }

  int size() const { return static_cast<int>(parties_.size()); }

  void check_party(PartyId id, std::string_view what) const {
    if (id < 0 || id >= size()) throw ProtocolError(fmt::format("{}: unknown party {}", what, id));
  }

  void send(PartyId from, PartyId to, FrameKind kind, std::vector<std::uint8_t> payload) {
    check_party(to, fmt::format("routing error: {} frame from party {}", kind_name(kind), from));
    Message m;
    m.seq = seq_[static_cast<std::size_t>(from)]++;
    m.sender = from;
    m.receiver = to;
    m.kind = kind;
    m.size = payload.size();
    m.payload = std::move(payload);
    m.step = step_;
    m.timestamp = elapsed();
    outbox_[static_cast<std::size_t>(from)].push_back(std::move(m));
  }

  Message receive(PartyId self, FrameKind kind, PartyId from) {
    auto& box = inbox_[static_cast<std::size_t>(self)];
    auto it = std::find_if(box.begin(), box.end(), [&](const Message& m) { return m.kind == kind && m.sender == from; });
    if (it == box.end())
      throw ProtocolError(fmt::format("party {} ({}) is waiting for a {} frame from party {} but none is pending",
                                      self, parties_[static_cast<std::size_t>(self)]->name(), kind_name(kind), from));
    Message m = std::move(*it);
    box.erase(it);
    return m;
  }

  bool has_pending(PartyId self, FrameKind kind, PartyId from) const {
    const auto& box = inbox_[static_cast<std::size_t>(self)];
    return std::any_of(box.begin(), box.end(), [&](const Message& m) { return m.kind == kind && m.sender == from; });
  }

  void add_phase(PartyId p, Phase phase, double seconds) {
    auto& t = transcript_.timing[static_cast<std::size_t>(p)];
    switch (phase) {
      case Phase::Encrypt: t.encrypt += seconds; break;
      case Phase::Decrypt: t.decrypt += seconds; break;
      case Phase::Transfer: t.transfer += seconds; break;
    }
  }

  void run(const Schedule& schedule) {
    for (const auto& step : schedule)
      for (PartyId a : step.actors) check_party(a, fmt::format("schedule step '{}'", step.name));

    for (step_ = 0; step_ < schedule.size(); ++step_) {
      const auto& step = schedule[step_];
      std::vector<double> busy(step.actors.size(), 0.0);
      std::vector<std::exception_ptr> errors(step.actors.size());
      auto act = [&](std::size_t idx) {
        const PartyId id = step.actors[idx];
        const double t0 = thread_cpu_seconds();
        try {
          Channel ch(*this, id);
          parties_[static_cast<std::size_t>(id)]->act(step.name, ch);
        } catch (...) {
          errors[idx] = std::current_exception();
        }
        busy[idx] = thread_cpu_seconds() - t0;
      };

      if (opt_.mode == ExecutionMode::Threaded && step.actors.size() > 1) {
        std::vector<std::thread> workers;
        for (std::size_t i = 0; i < step.actors.size(); ++i) workers.emplace_back(act, i);
        for (auto& w : workers) w.join();
      } else {
        for (std::size_t i = 0; i < step.actors.size(); ++i) act(i);
      }

      double slowest = 0.0;
      for (std::size_t i = 0; i < step.actors.size(); ++i) {
        transcript_.timing[static_cast<std::size_t>(step.actors[i])].busy += busy[i];
        slowest = std::max(slowest, busy[i]);
      }
      transcript_.critical_path_seconds += slowest;
      transcript_.critical_path_by_step[step.name] += slowest;
      transcript_.step_seconds.push_back(slowest);

      for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        try {
          std::rethrow_exception(errors[i]);
        } catch (const ProtocolError& e) {
          throw ProtocolError(fmt::format("protocol aborted at step {} '{}': {}\n{}", step_, step.name, e.what(), dump()));
        }
      }
      commit();
      if (opt_.after_step) opt_.after_step(step_);
    }
    transcript_.steps = schedule.size();
    transcript_.wall_seconds = elapsed();
  }

  Transcript take() { return std::move(transcript_); }

 private:
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  // Barrier: deliver this step's messages in (sender, seq) order so both modes log identically.
  void commit() {
    for (auto& box : outbox_) {
      for (auto& m : box) {
        transcript_.total_bytes += m.size;
        transcript_.bytes_by_kind[m.kind] += m.size;
        transcript_.bytes_by_direction[{m.sender, m.receiver}] += m.size;
        Message logged = m;
        if (!opt_.keep_payloads) logged.payload.clear();
        transcript_.messages.push_back(std::move(logged));
        inbox_[static_cast<std::size_t>(m.receiver)].push_back(std::move(m));
      }
      box.clear();
    }
  }

  std::string dump() const {
    std::string out = "party states:";
    for (std::size_t p = 0; p < parties_.size(); ++p) {
      out += fmt::format("\n  [{}] {}: {} pending", p, parties_[p]->name(), inbox_[p].size());
      for (const auto& m : inbox_[p]) out += fmt::format(" {}<-{}", kind_name(m.kind), m.sender);
      const auto st = parties_[p]->state();
      if (!st.empty()) out += "; " + st;
    }
    return out;
  }

  std::span<Party* const> parties_;
  const RunOptions& opt_;
  std::vector<std::deque<Message>> inbox_;
  std::vector<std::vector<Message>> outbox_;
  std::vector<std::uint64_t> seq_;
  Transcript transcript_;
  std::size_t step_ = 0;
  std::chrono::steady_clock::time_point start_;
};

PhaseScope::PhaseScope(Runtime& rt, PartyId party, Phase phase)
    : rt_(rt), party_(party), phase_(phase), start_(thread_cpu_seconds()) {}

PhaseScope::~PhaseScope() { rt_.add_phase(party_, phase_, thread_cpu_seconds() - start_); }

int Channel::num_parties() const { return rt_.size(); }

void Channel::send(PartyId to, FrameKind kind, std::vector<std::uint8_t> payload) {
  rt_.send(self_, to, kind, std::move(payload));
}

void Channel::broadcast(FrameKind kind, const std::vector<std::uint8_t>& payload) {
  for (PartyId p = 0; p < rt_.size(); ++p)
    if (p != self_) rt_.send(self_, p, kind, payload);
}

Message Channel::receive(FrameKind kind, PartyId from) { return rt_.receive(self_, kind, from); }

bool Channel::has_pending(FrameKind kind, PartyId from) const { return rt_.has_pending(self_, kind, from); }

Transcript run_protocol(std::span<Party* const> parties, const Schedule& schedule, const RunOptions& options) {
  Runtime rt(parties, options);
  rt.run(schedule);
  return rt.take();
}

// ---------------------------------------------------------------------------

double Transcript::encrypt_seconds() const {
  double s = 0;
  for (const auto& t : timing) s += t.encrypt;
  return s;
}

double Transcript::decrypt_seconds() const {
  double s = 0;
  for (const auto& t : timing) s += t.decrypt;
  return s;
}

double Transcript::busy_seconds() const {
  double s = 0;
  for (const auto& t : timing) s += t.busy;
  return s;
}

std::size_t Transcript::count(FrameKind k) const {
  return static_cast<std::size_t>(std::count_if(messages.begin(), messages.end(), [&](const Message& m) { return m.kind == k; }));
}

bool Transcript::totals_reconcile() const {
  std::uint64_t total = 0;
  std::map<FrameKind, std::uint64_t> by_kind;
  std::map<std::pair<PartyId, PartyId>, std::uint64_t> by_dir;
  for (const auto& m : messages) {
    total += m.size;
    by_kind[m.kind] += m.size;
    by_dir[{m.sender, m.receiver}] += m.size;
  }
  return total == total_bytes && by_kind == bytes_by_kind && by_dir == bytes_by_direction;
}

void Transcript::write_jsonl(std::ostream& out, bool include_payloads) const {
  static constexpr char kHex[] = "0123456789abcdef";
  for (const auto& m : messages) {
    nlohmann::json j = {{"seq", m.seq},
                        {"step", m.step},
                        {"sender", m.sender},
                        {"receiver", m.receiver},
                        {"kind", kind_name(m.kind)},
                        {"bytes", m.size},
                        {"t", m.timestamp}};
    if (include_payloads && !m.payload.empty()) {
      std::string hex;
      hex.reserve(m.payload.size() * 2);
      for (auto b : m.payload) {
        hex.push_back(kHex[b >> 4]);
        hex.push_back(kHex[b & 15]);
      }
      j["payload"] = std::move(hex);
    }
    out << j.dump() << '\n';
  }
}

nlohmann::json Transcript::summary() const {
  nlohmann::json kinds = nlohmann::json::object();
  for (const auto& [k, b] : bytes_by_kind) kinds[std::string(kind_name(k))] = b;
  nlohmann::json dirs = nlohmann::json::array();
  for (const auto& [d, b] : bytes_by_direction) dirs.push_back({{"from", d.first}, {"to", d.second}, {"bytes", b}});
  nlohmann::json parties = nlohmann::json::array();
  for (std::size_t p = 0; p < timing.size(); ++p)
    parties.push_back({{"name", p < party_names.size() ? party_names[p] : ""},
                       {"busy_seconds", timing[p].busy},
                       {"compute_seconds", timing[p].compute()},
                       {"encrypt_seconds", timing[p].encrypt},
                       {"decrypt_seconds", timing[p].decrypt},
                       {"transfer_seconds", timing[p].transfer}});
  return {{"messages", messages.size()},
          {"steps", steps},
          {"total_bytes", total_bytes},
          {"bytes_by_kind", kinds},
          {"bytes_by_direction", dirs},
          {"wall_seconds", wall_seconds},
          {"critical_path_seconds", critical_path_seconds},
          {"critical_path_by_step", critical_path_by_step},
          {"parties", parties}};
}

// ---------------------------------------------------------------------------

bool LocalityReport::passed() const {
  return std::all_of(rules.begin(), rules.end(), [](const RuleResult& r) { return r.passed; });
}

const RuleResult& LocalityReport::rule(std::string_view name) const {
  for (const auto& r : rules)
    if (r.rule == name) return r;
  throw Error(fmt::format("no locality rule named '{}'", name));
}

LocalityReport assert_locality(const Transcript& t, const LocalityPolicy& policy) {
  std::size_t raw = 0, labels = 0, misrouted = 0, plain_grad = 0, cipher = 0;
  for (const auto& m : t.messages) {
    if (m.sender == m.receiver) continue;
    if (m.kind == FrameKind::RawFeatures) ++raw;
    if (m.kind == FrameKind::Labels) ++labels;
    if (is_label_derived_plaintext(m.kind)) {
      // Label-derived plaintext flows out of the label holder (gradients) or back into it (histograms).
      const bool ok = m.kind == FrameKind::HistogramPlain ? m.receiver == policy.label_holder
                                                          : m.sender == policy.label_holder;
      if (!ok) ++misrouted;
    }
    if (m.kind == FrameKind::GradientsPlain || m.kind == FrameKind::HistogramPlain) ++plain_grad;
    if (m.kind == FrameKind::GradientsCipher || m.kind == FrameKind::HistogramCipher) ++cipher;
  }

  LocalityReport r;
  r.rules.push_back({"raw-features-confined", raw == 0, fmt::format("{} raw-feature frames crossed parties", raw)});
  r.rules.push_back({"labels-confined", labels == 0, fmt::format("{} label frames crossed parties", labels)});
  r.rules.push_back({"label-derived-scope", misrouted == 0,
                     fmt::format("{} label-derived plaintext frames outside the label holder's links", misrouted)});
  if (policy.require_encrypted) {
    r.rules.push_back({"gradients-encrypted", plain_grad == 0,
                       fmt::format("{} plaintext and {} ciphertext gradient/histogram frames", plain_grad, cipher)});
  } else {
    r.rules.push_back({"gradients-encrypted", true,
                       fmt::format("not required; {} plaintext gradient/histogram frames (expected without HE)", plain_grad)});
  }
  return r;
}

}  // namespace vflab::fed
