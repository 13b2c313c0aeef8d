#pragma once
// Core model: value trees, boundary events, mutation rules, findings.
// Everything here is plain data; serialization lives in json_io.hpp.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <time.h>

namespace tbk {

// Exit codes shared by the CLI and the error type.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFindings = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitCapability = 3;
inline constexpr int kExitProtocol = 4;

struct Error : std::runtime_error {
    int exit_code;
    explicit Error(std::string msg, int code = 1)
        : std::runtime_error(std::move(msg)), exit_code(code) {}
};

inline uint64_t now_mono_ns() {
    timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return uint64_t(ts.tv_sec) * 1'000'000'000ull + uint64_t(ts.tv_nsec);
}

// ---------------------------------------------------------------------------
// Enums

enum class Side : uint8_t { T, H };

inline const char* to_string(Side s) { return s == Side::T ? "T" : "H"; }

inline Side side_from_string(std::string_view s) {
    if (s == "T") return Side::T;
    if (s == "H") return Side::H;
    throw Error("bad side: " + std::string(s));
}

// Lock-step phases. T posts READY/EXEC/DONE, H posts ARMED/OBSERVED.
enum class Phase : uint8_t { Ready, Armed, Exec, Observed, Done };

inline const char* to_string(Phase p) {
    switch (p) {
    case Phase::Ready: return "READY";
    case Phase::Armed: return "ARMED";
    case Phase::Exec: return "EXEC";
    case Phase::Observed: return "OBSERVED";
    case Phase::Done: return "DONE";
    }
    return "?";
}

inline std::optional<Phase> phase_from_string(std::string_view s) {
    if (s == "READY") return Phase::Ready;
    if (s == "ARMED") return Phase::Armed;
    if (s == "EXEC") return Phase::Exec;
    if (s == "OBSERVED") return Phase::Observed;
    if (s == "DONE") return Phase::Done;
    return std::nullopt;
}

enum class HandlingClass : uint8_t { Internal, Translated, Forwarded, Unknown };

inline const char* to_string(HandlingClass h) {
    switch (h) {
    case HandlingClass::Internal: return "internal";
    case HandlingClass::Translated: return "translated";
    case HandlingClass::Forwarded: return "forwarded";
    case HandlingClass::Unknown: return "unknown";
    }
    return "?";
}

enum class Category : uint8_t {
    ImproperReturn,
    InfoLeak,
    SizeMismatch,
    ZeroFillViolation,
    PermEscalation,
    DoS,
    ResourceExhaustion,
    IagoCrash,
    IagoSilentCorruption,
    StaleClockAccepted,
    RollbackAccepted,
    OOBAccess,
};

inline constexpr int kCategoryCount = 12;

inline const char* to_string(Category c) {
    switch (c) {
    case Category::ImproperReturn: return "ImproperReturn";
    case Category::InfoLeak: return "InfoLeak";
    case Category::SizeMismatch: return "SizeMismatch";
    case Category::ZeroFillViolation: return "ZeroFillViolation";
    case Category::PermEscalation: return "PermEscalation";
    case Category::DoS: return "DoS";
    case Category::ResourceExhaustion: return "ResourceExhaustion";
    case Category::IagoCrash: return "IagoCrash";
    case Category::IagoSilentCorruption: return "IagoSilentCorruption";
    case Category::StaleClockAccepted: return "StaleClockAccepted";
    case Category::RollbackAccepted: return "RollbackAccepted";
    case Category::OOBAccess: return "OOBAccess";
    }
    return "?";
}

// Kebab-case form used inside dedup keys.
inline const char* category_slug(Category c) {
    switch (c) {
    case Category::ImproperReturn: return "improper-return";
    case Category::InfoLeak: return "info-leak";
    case Category::SizeMismatch: return "size-mismatch";
    case Category::ZeroFillViolation: return "zero-fill-violation";
    case Category::PermEscalation: return "perm-escalation";
    case Category::DoS: return "dos";
    case Category::ResourceExhaustion: return "resource-exhaustion";
    case Category::IagoCrash: return "iago-crash";
    case Category::IagoSilentCorruption: return "iago-silent-corruption";
    case Category::StaleClockAccepted: return "stale-clock-accepted";
    case Category::RollbackAccepted: return "rollback-accepted";
    case Category::OOBAccess: return "oob-access";
    }
    return "?";
}

inline std::optional<Category> category_from_string(std::string_view s) {
    for (int i = 0; i < kCategoryCount; i++) {
        auto c = static_cast<Category>(i);
        if (s == to_string(c)) return c;
    }
    return std::nullopt;
}

enum class Severity : uint8_t { Low, Medium, High };

inline const char* to_string(Severity s) {
    switch (s) {
    case Severity::Low: return "low";
    case Severity::Medium: return "medium";
    case Severity::High: return "high";
    }
    return "?";
}

// Declared severity policy: integrity/memory-safety/freshness violations rank
// high, contract/availability violations medium, metadata exposure low.
inline Severity severity_of(Category c) {
    switch (c) {
    case Category::PermEscalation:
    case Category::IagoCrash:
    case Category::IagoSilentCorruption:
    case Category::RollbackAccepted:
    case Category::OOBAccess: return Severity::High;
    case Category::InfoLeak: return Severity::Low;
    default: return Severity::Medium;
    }
}

enum class MutationTarget : uint8_t {
    SyscallReturn,
    VirtqDesc,
    DmaPage,
    ClockSource,
    SnapshotStore,
};

inline const char* to_string(MutationTarget t) {
    switch (t) {
    case MutationTarget::SyscallReturn: return "syscall_return";
    case MutationTarget::VirtqDesc: return "virtq_desc";
    case MutationTarget::DmaPage: return "dma_page";
    case MutationTarget::ClockSource: return "clock_source";
    case MutationTarget::SnapshotStore: return "snapshot_store";
    }
    return "?";
}

inline std::optional<MutationTarget> mutation_target_from_string(std::string_view s) {
    for (int i = 0; i <= int(MutationTarget::SnapshotStore); i++) {
        auto t = static_cast<MutationTarget>(i);
        if (s == to_string(t)) return t;
    }
    return std::nullopt;
}

enum class MutationStrategy : uint8_t {
    Zero,
    SignFlip,
    InflateLength,
    PartialSuccess,
    ReplayPrevious,
    BoundaryValue,
    RandomBytes,
    SkewRate,
};

inline const char* to_string(MutationStrategy s) {
    switch (s) {
    case MutationStrategy::Zero: return "zero";
    case MutationStrategy::SignFlip: return "sign_flip";
    case MutationStrategy::InflateLength: return "inflate_length";
    case MutationStrategy::PartialSuccess: return "partial_success";
    case MutationStrategy::ReplayPrevious: return "replay_previous";
    case MutationStrategy::BoundaryValue: return "boundary_value";
    case MutationStrategy::RandomBytes: return "random_bytes";
    case MutationStrategy::SkewRate: return "skew_rate";
    }
    return "?";
}

inline std::optional<MutationStrategy> mutation_strategy_from_string(std::string_view s) {
    for (int i = 0; i <= int(MutationStrategy::SkewRate); i++) {
        auto st = static_cast<MutationStrategy>(i);
        if (s == to_string(st)) return st;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// ValueTree: recursive capture of syscall arguments.
//
// Capture limits (depth, byte budget) are applied by the capturing side; the
// tree only records whether a node was cut short so both sides stay
// byte-comparable after identical limits.

inline constexpr int kCaptureDepthLimit = 4;
inline constexpr size_t kCaptureByteLimit = 4096;

class ValueTree {
  public:
    enum class Kind : uint8_t { Int, Bytes, Null, Rec };

    using Field = std::pair<std::string, ValueTree>;

    ValueTree() : kind_(Kind::Null) {}

    static ValueTree of_int(int64_t v) {
        ValueTree t;
        t.kind_ = Kind::Int;
        t.int_ = v;
        return t;
    }

    static ValueTree of_bytes(const uint8_t* data, size_t n,
                              size_t limit = kCaptureByteLimit) {
        ValueTree t;
        t.kind_ = Kind::Bytes;
        size_t keep = std::min(n, limit);
        t.bytes_.assign(data, data + keep);
        t.trunc_ = keep < n;
        return t;
    }

    static ValueTree of_bytes(const std::vector<uint8_t>& v,
                              size_t limit = kCaptureByteLimit) {
        return of_bytes(v.data(), v.size(), limit);
    }

    static ValueTree of_string(std::string_view s, size_t limit = kCaptureByteLimit) {
        return of_bytes(reinterpret_cast<const uint8_t*>(s.data()), s.size(), limit);
    }

    // Null node: unreadable pointer, output-only buffer, or depth cut.
    static ValueTree null(bool truncated = false) {
        ValueTree t;
        t.trunc_ = truncated;
        return t;
    }

    static ValueTree rec(std::vector<Field> fields) {
        ValueTree t;
        t.kind_ = Kind::Rec;
        t.fields_ = std::move(fields);
        return t;
    }

    Kind kind() const { return kind_; }
    bool truncated() const { return trunc_; }
    void set_truncated(bool v) { trunc_ = v; }

    int64_t as_int() const {
        if (kind_ != Kind::Int) throw Error("ValueTree: not an int");
        return int_;
    }

    const std::vector<uint8_t>& as_bytes() const {
        if (kind_ != Kind::Bytes) throw Error("ValueTree: not bytes");
        return bytes_;
    }

    const std::vector<Field>& fields() const {
        if (kind_ != Kind::Rec) throw Error("ValueTree: not a record");
        return fields_;
    }

    // Field lookup on records; throws on missing so schema bugs surface early.
    const ValueTree& at(std::string_view name) const {
        for (const auto& [k, v] : fields())
            if (k == name) return v;
        throw Error("ValueTree: no field '" + std::string(name) + "'");
    }

    const ValueTree* find(std::string_view name) const {
        if (kind_ != Kind::Rec) return nullptr;
        for (const auto& [k, v] : fields_)
            if (k == name) return &v;
        return nullptr;
    }

    int depth() const {
        if (kind_ != Kind::Rec) return 1;
        int d = 0;
        for (const auto& [k, v] : fields_) d = std::max(d, v.depth());
        return 1 + d;
    }

    size_t byte_weight() const {
        switch (kind_) {
        case Kind::Int: return 8;
        case Kind::Bytes: return bytes_.size();
        case Kind::Null: return 0;
        case Kind::Rec: {
            size_t n = 0;
            for (const auto& [k, v] : fields_) n += v.byte_weight();
            return n;
        }
        }
        return 0;
    }

    friend bool operator==(const ValueTree& a, const ValueTree& b) {
        if (a.kind_ != b.kind_ || a.trunc_ != b.trunc_) return false;
        switch (a.kind_) {
        case Kind::Int: return a.int_ == b.int_;
        case Kind::Bytes: return a.bytes_ == b.bytes_;
        case Kind::Null: return true;
        case Kind::Rec: return a.fields_ == b.fields_;
        }
        return false;
    }
    friend bool operator!=(const ValueTree& a, const ValueTree& b) { return !(a == b); }

  private:
    Kind kind_;
    bool trunc_ = false;
    int64_t int_ = 0;
    std::vector<uint8_t> bytes_;
    std::vector<Field> fields_;
};

// ---------------------------------------------------------------------------
// Boundary events

// Pseudo syscall numbers for subsystem probes; never collide with the real
// corpus (all real numbers are >= 0) and are skipped by oracle/classifier.
inline constexpr int64_t kPseudoPfProbe = -100;
inline constexpr int64_t kPseudoVirtqProbe = -101;
inline constexpr int64_t kPseudoClockProbe = -102;
inline constexpr int64_t kPseudoCrashMark = -103;

inline bool is_pseudo_op(int64_t nr) { return nr < 0; }

struct BoundaryEvent {
    Side side = Side::T;
    int64_t cycle_id = 0;
    // Session-unique per side; an H event carries the seq of the T event it
    // was caused by, which is what the correlator joins on.
    int64_t seq = 0;
    std::string group_id;
    int64_t syscall = 0;
    ValueTree args; // always a record keyed by parameter name
    std::optional<int64_t> ret;
    uint64_t mono_ts = 0;

    bool operator==(const BoundaryEvent& o) const {
        return side == o.side && cycle_id == o.cycle_id && seq == o.seq &&
               group_id == o.group_id && syscall == o.syscall && args == o.args &&
               ret == o.ret;
        // mono_ts intentionally excluded: wall-free equality for replay checks
    }
};

struct MutationRule {
    MutationTarget target = MutationTarget::SyscallReturn;
    MutationStrategy strategy = MutationStrategy::Zero;
    uint64_t seed = 0;
    // "*" or comma-separated syscall names / subsystem names this applies to.
    std::string applicability = "*";

    bool applies_to(std::string_view name) const {
        if (applicability == "*") return true;
        size_t pos = 0;
        while (pos <= applicability.size()) {
            size_t comma = applicability.find(',', pos);
            size_t end = comma == std::string::npos ? applicability.size() : comma;
            if (std::string_view(applicability).substr(pos, end - pos) == name)
                return true;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        return false;
    }
};

// ---------------------------------------------------------------------------
// Findings

struct EventRef {
    Side side = Side::T;
    int64_t cycle_id = 0;
    int64_t seq = 0;

    friend auto operator<=>(const EventRef& a, const EventRef& b) {
        if (auto c = a.cycle_id <=> b.cycle_id; c != 0) return c;
        if (auto c = a.seq <=> b.seq; c != 0) return c;
        return int(a.side) <=> int(b.side);
    }
    friend bool operator==(const EventRef&, const EventRef&) = default;
};

inline EventRef ref_of(const BoundaryEvent& e) {
    return EventRef{e.side, e.cycle_id, e.seq};
}

// Evidence cap: keep the smallest refs so merge stays order-independent.
inline constexpr size_t kEvidenceCap = 16;

struct Finding {
    Category category = Category::ImproperReturn;
    Severity severity = Severity::Medium;
    std::string subsystem;
    std::string trigger;
    std::string description;
    int64_t cycle_id = 0; // min cycle across merged occurrences
    std::vector<EventRef> evidence; // sorted, unique, capped

    std::string dedup_key() const {
        std::string k = category_slug(category);
        k += '|';
        k += subsystem;
        k += '|';
        k += trigger;
        return k;
    }

    void normalize() {
        std::sort(evidence.begin(), evidence.end());
        evidence.erase(std::unique(evidence.begin(), evidence.end()), evidence.end());
        if (evidence.size() > kEvidenceCap) evidence.resize(kEvidenceCap);
    }
};

inline Finding make_finding(Category cat, std::string subsystem, std::string trigger,
                            std::string description, int64_t cycle,
                            std::vector<EventRef> evidence) {
    Finding f;
    f.category = cat;
    f.severity = severity_of(cat);
    f.subsystem = std::move(subsystem);
    f.trigger = std::move(trigger);
    f.description = std::move(description);
    f.cycle_id = cycle;
    f.evidence = std::move(evidence);
    f.normalize();
    return f;
}

// Union-then-cap merge: idempotent, commutative, associative. The
// representative description comes from the earliest-cycle side so merged
// output is order-independent.
inline Finding merge(const Finding& a, const Finding& b) {
    if (a.dedup_key() != b.dedup_key())
        throw Error("merge: dedup keys differ: " + a.dedup_key() + " vs " + b.dedup_key());
    // Representative = min by (cycle, description): a total order, so merging
    // in any association/commutation order yields the same finding.
    auto rank = [](const Finding& f) { return std::tie(f.cycle_id, f.description); };
    const Finding& first = (rank(a) <= rank(b)) ? a : b;
    Finding out = first;
    out.cycle_id = std::min(a.cycle_id, b.cycle_id);
    out.evidence.insert(out.evidence.end(), (&first == &a ? b : a).evidence.begin(),
                        (&first == &a ? b : a).evidence.end());
    out.normalize();
    return out;
}

// ---------------------------------------------------------------------------
// Resource census; one function computes it on both sides of a cycle.

struct Census {
    int64_t fds = 0;
    int64_t mappings = 0;
    int64_t threads = 1;

    friend bool operator==(const Census&, const Census&) = default;
};

// ---------------------------------------------------------------------------
// Post-state observations. The target records these after executing a case so
// the analyzer can judge side conditions offline from logs alone.

struct MapObs {
    int64_t requested_len = 0;
    int64_t file_len = 0;
    int64_t fill_count = 0; // bytes the content fill reported
    std::vector<uint8_t> tail_sample; // first bytes past EOF-backed region
};

struct ShmObs {
    int64_t requested = 0;
    int64_t granted = 0; // size the target actually reserved
    int64_t reported = 0; // size stat reports back
};

struct RemapObs {
    int64_t old_size = 0;
    int64_t requested_new = 0;
    int64_t accounted = 0; // size the mapping table carries afterwards
};

enum class EpollWaitResult : uint8_t { Events, Timeout, WatchdogDeadlock };

inline const char* to_string(EpollWaitResult r) {
    switch (r) {
    case EpollWaitResult::Events: return "events";
    case EpollWaitResult::Timeout: return "timeout";
    case EpollWaitResult::WatchdogDeadlock: return "watchdog_deadlock";
    }
    return "?";
}

struct EpollObs {
    int64_t requested_depth = 0;
    int64_t accepted_depth = 0;
    int64_t limit = 0;
    bool cycle_accepted = false;
    std::optional<EpollWaitResult> wait_result;
    int64_t watchdog_ms = 0;
};

struct ClockObs {
    int64_t res_ns = 0; // what clock_getres reported
    int64_t documented_res_ns = 0; // contract value
    std::vector<int64_t> deltas_ns; // successive virtual-clock deltas
    int64_t trusted_elapsed_ns = 0; // same interval on the trusted reference
    int64_t drift_ns = 0; // virtual-now minus expectation from a boot anchor
};

enum class PfOutcome : uint8_t { Fresh, StaleServed, RejectedFreshness, RejectedIntegrity };

inline const char* to_string(PfOutcome o) {
    switch (o) {
    case PfOutcome::Fresh: return "fresh";
    case PfOutcome::StaleServed: return "stale_served";
    case PfOutcome::RejectedFreshness: return "rejected_freshness";
    case PfOutcome::RejectedIntegrity: return "rejected_integrity";
    }
    return "?";
}

struct PfObs {
    PfOutcome outcome = PfOutcome::Fresh;
    int64_t flushes = 0; // flush events observed during the probe
    int64_t blocks_written = 0;
};

struct VirtqObs {
    bool accepted = false; // device-supplied values consumed without validation
    int64_t used_len = 0;
    int64_t posted_len = 0;
    std::string detail;
};

struct PostState {
    int64_t cycle_id = 0;
    Census census;
    std::optional<MapObs> map;
    std::optional<ShmObs> shm;
    std::optional<RemapObs> remap;
    std::optional<EpollObs> epoll;
    std::optional<ClockObs> clock;
    std::optional<PfObs> pf;
    std::optional<VirtqObs> virtq;
};

// h.log record describing a mutation that was actually applied.
struct Annotation {
    int64_t cycle_id = 0;
    int64_t seq = -1; // seq of the affected H event, -1 for non-syscall targets
    MutationRule rule;
    int64_t original = 0;
    int64_t injected = 0;
    std::string note;
};

} // namespace tbk
