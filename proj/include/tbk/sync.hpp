#pragma once
// File-based lock-step channel between the target-side agent (T) and the
// host-side monitor (H).
//
// Signal file: one ASCII line "PHASE:cycle_id:seq\n", replaced atomically via
// temp-file+rename. Only the *last* post is visible, which forces the waiting
// discipline encoded in the protocol scripts below: a party may only await a
// phase whose successor is posted by itself. T awaits {ARMED, OBSERVED},
// H awaits {READY, EXEC}; nobody awaits DONE (it is a history/resume record
// that T immediately overwrites with the next READY).
//
// Both runners iterate the same protocol scripts the model checker explores,
// so the exhaustive interleaving proof covers the shipped loop, not a copy.

#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fcntl.h>
#include <time.h>
#include <unistd.h>

#include "tbk/types.hpp"

namespace tbk {

struct SignalState {
    Phase phase = Phase::Ready;
    int64_t cycle_id = 0;
    int64_t seq = 0;

    friend bool operator==(const SignalState&, const SignalState&) = default;
};

inline std::string format_signal(const SignalState& s) {
    std::string out = to_string(s.phase);
    out += ':';
    out += std::to_string(s.cycle_id);
    out += ':';
    out += std::to_string(s.seq);
    out += '\n';
    return out;
}

inline std::optional<SignalState> parse_signal(std::string_view line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r'))
        line.remove_suffix(1);
    size_t a = line.find(':');
    if (a == std::string_view::npos) return std::nullopt;
    size_t b = line.find(':', a + 1);
    if (b == std::string_view::npos) return std::nullopt;
    auto phase = phase_from_string(line.substr(0, a));
    if (!phase) return std::nullopt;
    SignalState s;
    s.phase = *phase;
    try {
        s.cycle_id = std::stoll(std::string(line.substr(a + 1, b - a - 1)));
        s.seq = std::stoll(std::string(line.substr(b + 1)));
    } catch (...) {
        return std::nullopt;
    }
    return s;
}

// Which party posts a phase.
inline Side phase_owner(Phase p) {
    switch (p) {
    case Phase::Ready:
    case Phase::Exec:
    case Phase::Done: return Side::T;
    case Phase::Armed:
    case Phase::Observed: return Side::H;
    }
    return Side::T;
}

// Which phases a party may legally block on (successor posted by itself).
inline bool legal_await(Side self, Phase p) {
    if (self == Side::T) return p == Phase::Armed || p == Phase::Observed;
    return p == Phase::Ready || p == Phase::Exec;
}

struct SyncTimeout : Error {
    Phase awaited;
    int64_t cycle_id;
    SyncTimeout(Phase p, int64_t cycle, int timeout_ms)
        : Error("sync timeout after " + std::to_string(timeout_ms) + "ms awaiting " +
                std::string(to_string(p)) + ":" + std::to_string(cycle)),
          awaited(p), cycle_id(cycle) {}
};

inline constexpr int kDefaultSyncTimeoutMs = 5000;
inline constexpr int kBackoffStartUs = 1000; // 1ms
inline constexpr int kBackoffCapUs = 64000;  // 64ms

class SignalChannel {
  public:
    SignalChannel() = default;

    SignalChannel(std::string signal_path, std::string history_path, Side self,
                  int timeout_ms = kDefaultSyncTimeoutMs)
        : path_(std::move(signal_path)), history_path_(std::move(history_path)),
          self_(self), timeout_ms_(timeout_ms) {}

    // Highest seq this party has posted or observed; posts go strictly above.
    void seed_seq(int64_t seq) { last_seq_ = std::max(last_seq_, seq); }
    int64_t last_seq() const { return last_seq_; }

    std::optional<SignalState> peek() const {
        std::ifstream in(path_);
        if (!in) return std::nullopt;
        std::string line;
        if (!std::getline(in, line)) return std::nullopt;
        return parse_signal(line);
    }

    SignalState post(Phase phase, int64_t cycle) {
        if (phase_owner(phase) != self_)
            throw Error("protocol: " + std::string(to_string(self_)) + " may not post " +
                            to_string(phase),
                        kExitProtocol);
        SignalState s{phase, cycle, last_seq_ + 1};
        last_seq_ = s.seq;
        std::string line = format_signal(s);
        std::string tmp = path_ + "." + to_string(self_) + ".tmp";
        write_file(tmp, line);
        if (rename(tmp.c_str(), path_.c_str()) != 0)
            throw Error("rename failed for signal file " + path_);
        append_history(line);
        return s;
    }

    // Block until the file shows exactly (phase, cycle). Polling backs off
    // 1ms -> 64ms. Throws SyncTimeout past the deadline.
    SignalState await(Phase phase, int64_t cycle) {
        if (!legal_await(self_, phase))
            throw Error("protocol: " + std::string(to_string(self_)) +
                            " may not await " + to_string(phase) +
                            " (its successor is posted by the other side)",
                        kExitProtocol);
        uint64_t deadline = now_mono_ns() + uint64_t(timeout_ms_) * 1'000'000ull;
        int backoff_us = kBackoffStartUs;
        for (;;) {
            auto s = peek();
            if (s) {
                if (s->seq < last_seq_ && s->phase != Phase::Ready)
                    throw Error("protocol: signal seq regressed", kExitProtocol);
                if (s->phase == phase && s->cycle_id == cycle) {
                    last_seq_ = std::max(last_seq_, s->seq);
                    return *s;
                }
            }
            if (now_mono_ns() >= deadline) throw SyncTimeout(phase, cycle, timeout_ms_);
            sleep_us(backoff_us);
            backoff_us = std::min(backoff_us * 2, kBackoffCapUs);
        }
    }

    const std::string& path() const { return path_; }

  private:
    static void sleep_us(int us) {
        timespec ts{us / 1'000'000, long(us % 1'000'000) * 1000};
        nanosleep(&ts, nullptr);
    }

    static void write_file(const std::string& p, const std::string& data) {
        int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd < 0) throw Error("cannot open " + p);
        ssize_t n = ::write(fd, data.data(), data.size());
        ::close(fd);
        if (n != ssize_t(data.size())) throw Error("short write to " + p);
    }

    void append_history(const std::string& line) const {
        if (history_path_.empty()) return;
        int fd = ::open(history_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (fd < 0) throw Error("cannot open " + history_path_);
        (void)!::write(fd, line.data(), line.size());
        ::close(fd);
    }

    std::string path_;
    std::string history_path_;
    Side self_ = Side::T;
    int timeout_ms_ = kDefaultSyncTimeoutMs;
    int64_t last_seq_ = 0;
};

inline std::vector<SignalState> read_signal_history(const std::string& path) {
    std::vector<SignalState> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (auto s = parse_signal(line)) out.push_back(*s);
        // torn trailing line from a crash is skipped
    }
    return out;
}

// ---------------------------------------------------------------------------
// Protocol scripts. Both runners and the model checker consume these.

enum class StepKind : uint8_t { Post, Await, Work };

enum class WorkKind : uint8_t { None, TExec, TTeardown, HArm, HObserve };

struct ProtocolStep {
    StepKind kind = StepKind::Post;
    Phase phase = Phase::Ready; // for Post/Await
    WorkKind work = WorkKind::None;
    int64_t cycle = 0;
};

inline std::vector<ProtocolStep> t_protocol(int64_t first_cycle, int64_t cycles) {
    std::vector<ProtocolStep> s;
    for (int64_t c = first_cycle; c < first_cycle + cycles; c++) {
        s.push_back({StepKind::Post, Phase::Ready, WorkKind::None, c});
        s.push_back({StepKind::Await, Phase::Armed, WorkKind::None, c});
        s.push_back({StepKind::Work, Phase::Ready, WorkKind::TExec, c});
        s.push_back({StepKind::Post, Phase::Exec, WorkKind::None, c});
        s.push_back({StepKind::Await, Phase::Observed, WorkKind::None, c});
        s.push_back({StepKind::Work, Phase::Ready, WorkKind::TTeardown, c});
        s.push_back({StepKind::Post, Phase::Done, WorkKind::None, c});
    }
    return s;
}

inline std::vector<ProtocolStep> h_protocol(int64_t first_cycle, int64_t cycles) {
    std::vector<ProtocolStep> s;
    for (int64_t c = first_cycle; c < first_cycle + cycles; c++) {
        s.push_back({StepKind::Await, Phase::Ready, WorkKind::None, c});
        s.push_back({StepKind::Work, Phase::Ready, WorkKind::HArm, c});
        s.push_back({StepKind::Post, Phase::Armed, WorkKind::None, c});
        s.push_back({StepKind::Await, Phase::Exec, WorkKind::None, c});
        s.push_back({StepKind::Work, Phase::Ready, WorkKind::HObserve, c});
        s.push_back({StepKind::Post, Phase::Observed, WorkKind::None, c});
    }
    return s;
}

// ---------------------------------------------------------------------------
// Exhaustive interleaving exploration of the two scripts over an atomic
// last-line cell. Proves: no deadlock, no lost update (equivalently: every
// await fires), and at every DONE post H has already observed that cycle.

struct ModelResult {
    bool ok = false;
    int64_t states = 0;
    int64_t deadlocks = 0;
    int64_t done_disagreements = 0;
    std::string first_failure;
};

inline ModelResult check_protocol(const std::vector<ProtocolStep>& ts,
                                  const std::vector<ProtocolStep>& hs) {
    struct State {
        size_t pt, ph;          // program counters
        int phase;              // -1 = empty cell
        int64_t cycle, seq;
        int64_t seen_t, seen_h; // last seq each party knows
        int64_t h_observed;     // highest cycle H has posted OBSERVED for, -1 none
    };
    auto key = [](const State& s) {
        return std::array<int64_t, 8>{int64_t(s.pt), int64_t(s.ph), s.phase,
                                      s.cycle,       s.seq,        s.seen_t,
                                      s.seen_h,      s.h_observed};
    };

    ModelResult res;
    std::set<std::array<int64_t, 8>> visited;
    std::vector<State> stack;
    stack.push_back({0, 0, -1, 0, 0, 0, 0, -1});

    auto enabled = [&](const State& s, Side who) -> bool {
        const auto& script = who == Side::T ? ts : hs;
        size_t pc = who == Side::T ? s.pt : s.ph;
        if (pc >= script.size()) return false;
        const ProtocolStep& st = script[pc];
        if (st.kind != StepKind::Await) return true;
        return s.phase == int(st.phase) && s.cycle == st.cycle;
    };

    auto fire = [&](State s, Side who) -> State {
        auto& script = who == Side::T ? ts : hs;
        size_t& pc = who == Side::T ? s.pt : s.ph;
        const ProtocolStep& st = script[pc];
        int64_t& seen = who == Side::T ? s.seen_t : s.seen_h;
        switch (st.kind) {
        case StepKind::Post:
            s.phase = int(st.phase);
            s.cycle = st.cycle;
            s.seq = s.seq + 1;
            seen = s.seq;
            if (who == Side::T && st.phase == Phase::Done && s.h_observed < st.cycle) {
                res.done_disagreements++;
                if (res.first_failure.empty())
                    res.first_failure = "DONE posted for cycle " + std::to_string(st.cycle) +
                                        " before H observed it";
            }
            if (who == Side::H && st.phase == Phase::Observed)
                s.h_observed = std::max(s.h_observed, st.cycle);
            break;
        case StepKind::Await:
            seen = s.seq;
            break;
        case StepKind::Work: break;
        }
        pc++;
        return s;
    };

    while (!stack.empty()) {
        State s = stack.back();
        stack.pop_back();
        if (!visited.insert(key(s)).second) continue;
        res.states++;
        bool t_on = enabled(s, Side::T);
        bool h_on = enabled(s, Side::H);
        bool t_end = s.pt >= ts.size();
        bool h_end = s.ph >= hs.size();
        if (!t_on && !h_on) {
            if (!(t_end && h_end)) {
                res.deadlocks++;
                if (res.first_failure.empty()) {
                    auto describe = [&](Side who) {
                        const auto& script = who == Side::T ? ts : hs;
                        size_t pc = who == Side::T ? s.pt : s.ph;
                        if (pc >= script.size()) return std::string("finished");
                        const auto& st = script[pc];
                        return std::string(st.kind == StepKind::Await ? "awaits " : "at ") +
                               to_string(st.phase) + ":" + std::to_string(st.cycle);
                    };
                    res.first_failure = "deadlock: T " + describe(Side::T) + ", H " +
                                        describe(Side::H) + ", cell=" +
                                        (s.phase < 0 ? std::string("empty")
                                                     : std::string(to_string(Phase(s.phase))) +
                                                           ":" + std::to_string(s.cycle));
                }
            }
            continue;
        }
        if (t_on) stack.push_back(fire(s, Side::T));
        if (h_on) stack.push_back(fire(s, Side::H));
    }
    res.ok = res.deadlocks == 0 && res.done_disagreements == 0;
    return res;
}

inline ModelResult check_protocol(int64_t cycles) {
    return check_protocol(t_protocol(0, cycles), h_protocol(0, cycles));
}

} // namespace tbk
