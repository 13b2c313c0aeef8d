#pragma once
// Host-side mutation engine. A plan is a pure function of (seed, cycle,
// case), so the monitor derives it without a side channel and the analyzer
// re-derives it offline. At most one rule arms per cycle (mutation locality).
//
// Mutations run against every profile — the hardened target proving it
// rejects them is half the point — so nothing here consults toggles.

#include <optional>
#include <string>
#include <vector>

#include "tbk/cases.hpp"
#include "tbk/clock_device.hpp"
#include "tbk/generator.hpp"
#include "tbk/oracle.hpp"
#include "tbk/rng.hpp"
#include "tbk/types.hpp"

namespace tbk {

struct Capabilities {
    bool observe_args = true;
    bool mutate_return = true;
    bool observe_dma = true; // virtqueue/DMA visibility (sim adapter only)
};

inline Capabilities sim_capabilities() { return {true, true, true}; }
inline Capabilities trace_capabilities() { return {true, true, false}; }

struct ArmPlan {
    std::optional<MutationRule> rule;
    // strategy parameters (meaning depends on target)
    int64_t snapshot_back = 0; // 0 = latest (legal replay), N = N flushes back
    int64_t rate_num = 1, rate_den = 1;
    std::string note;
};

class MutationPlanner {
  public:
    MutationPlanner(GenConfig gen, Capabilities caps, std::vector<MutationRule> custom = {})
        : gen_(gen), caps_(caps), custom_(std::move(custom)) {}

    const Capabilities& caps() const { return caps_; }

    // Rules a custom file may carry that the adapter cannot honor.
    std::optional<std::string> unsupported_custom_rule() const {
        for (const auto& r : custom_) {
            if (!caps_.mutate_return && r.target == MutationTarget::SyscallReturn)
                return std::string("syscall_return mutation needs the mutate_return capability");
            if (!caps_.observe_dma && (r.target == MutationTarget::VirtqDesc ||
                                       r.target == MutationTarget::DmaPage))
                return std::string("virtqueue/DMA mutation needs the observe_dma capability");
        }
        return std::nullopt;
    }

    ArmPlan plan(const TestCase& tc) const {
        if (!custom_.empty()) return plan_custom(tc);
        return plan_default(tc);
    }

  private:
    ArmPlan plan_default(const TestCase& tc) const {
        ArmPlan p;
        int64_t ordinal = tc.geti("ordinal");
        Rng rng = Rng::at(gen_.seed, 0x3141ull, uint64_t(tc.cycle_id));
        switch (tc.kind) {
        case CaseKind::Syscall: {
            if (!caps_.mutate_return) return p;
            if (tc.nr != NR_read && tc.nr != NR_pread64) return p;
            if (ordinal % 3 != 2) return p; // every third read case is armed
            static const MutationStrategy cycle[5] = {
                MutationStrategy::InflateLength, MutationStrategy::SignFlip,
                MutationStrategy::BoundaryValue, MutationStrategy::Zero,
                MutationStrategy::PartialSuccess};
            MutationRule r;
            r.target = MutationTarget::SyscallReturn;
            r.strategy = cycle[(ordinal / 3) % 5];
            r.seed = rng.next();
            r.applicability = "read,pread64";
            p.rule = r;
            return p;
        }
        case CaseKind::ClockProbe: {
            if (tc.variant != 1) return p;
            MutationRule r;
            r.target = MutationTarget::ClockSource;
            r.seed = rng.next();
            r.applicability = "clock";
            switch ((ordinal / 2) % 4) {
            case 0: r.strategy = MutationStrategy::SkewRate;
                    p.rate_num = 2; p.rate_den = 1; p.note = "rate x2"; break;
            case 1: r.strategy = MutationStrategy::ReplayPrevious;
                    p.note = "frozen"; break;
            case 2: r.strategy = MutationStrategy::Zero;
                    p.note = "rebase to zero"; break;
            case 3: r.strategy = MutationStrategy::SkewRate;
                    p.rate_num = 1; p.rate_den = 2; p.note = "rate x0.5"; break;
            }
            p.rule = r;
            return p;
        }
        case CaseKind::PfProbe: {
            if (tc.variant != 1) return p; // arm only read-verify probes
            MutationRule r;
            r.target = MutationTarget::SnapshotStore;
            r.seed = rng.next();
            r.applicability = "pf";
            switch ((ordinal / 2) % 3) {
            case 0: r.strategy = MutationStrategy::ReplayPrevious;
                    p.snapshot_back = 1; p.note = "stale snapshot"; break;
            case 1: r.strategy = MutationStrategy::PartialSuccess;
                    p.snapshot_back = 1; p.note = "dropped last flush"; break;
            case 2: r.strategy = MutationStrategy::ReplayPrevious;
                    p.snapshot_back = 0; p.note = "replay of the present"; break;
            }
            p.rule = r;
            return p;
        }
        case CaseKind::VirtqProbe: {
            if (!caps_.observe_dma || tc.variant == 0) return p;
            MutationRule r;
            r.seed = rng.next();
            switch (tc.variant) {
            case 1: r.target = MutationTarget::VirtqDesc;
                    r.strategy = MutationStrategy::InflateLength;
                    r.applicability = "used_len"; p.note = "used len past capacity"; break;
            case 2: r.target = MutationTarget::VirtqDesc;
                    r.strategy = MutationStrategy::BoundaryValue;
                    r.applicability = "desc_addr"; p.note = "descriptor past arena"; break;
            case 3: r.target = MutationTarget::VirtqDesc;
                    r.strategy = MutationStrategy::SignFlip;
                    r.applicability = "desc_next"; p.note = "chain cycle"; break;
            case 4: r.target = MutationTarget::VirtqDesc;
                    r.strategy = MutationStrategy::InflateLength;
                    r.applicability = "hash_key"; p.note = "rss key length"; break;
            case 5: r.target = MutationTarget::DmaPage;
                    r.strategy = MutationStrategy::RandomBytes;
                    r.applicability = "dma"; p.note = "randomized dma page"; break;
            }
            p.rule = r;
            return p;
        }
        case CaseKind::AllocProbe: return p;
        }
        return p;
    }

    ArmPlan plan_custom(const TestCase& tc) const {
        ArmPlan p;
        for (const auto& r : custom_) {
            bool applies = false;
            switch (r.target) {
            case MutationTarget::SyscallReturn:
                applies = tc.kind == CaseKind::Syscall &&
                          (tc.nr == NR_read || tc.nr == NR_pread64) &&
                          r.applies_to(corpus().name_of(tc.nr));
                break;
            case MutationTarget::ClockSource:
                applies = tc.kind == CaseKind::ClockProbe;
                break;
            case MutationTarget::SnapshotStore:
                applies = tc.kind == CaseKind::PfProbe && tc.variant == 1;
                break;
            case MutationTarget::VirtqDesc:
                applies = tc.kind == CaseKind::VirtqProbe && tc.variant >= 1 &&
                          tc.variant <= 4;
                break;
            case MutationTarget::DmaPage:
                applies = tc.kind == CaseKind::VirtqProbe && tc.variant == 5;
                break;
            }
            if (!applies) continue;
            p.rule = r;
            p.rule->seed = mix(r.seed, uint64_t(tc.cycle_id));
            if (r.strategy == MutationStrategy::SkewRate) {
                p.rate_num = 2;
                p.rate_den = 1;
            }
            if (r.strategy == MutationStrategy::ReplayPrevious) p.snapshot_back = 1;
            p.note = "custom rule";
            return p;
        }
        return p;
    }

    GenConfig gen_;
    Capabilities caps_;
    std::vector<MutationRule> custom_;
};

// ---------------------------------------------------------------------------
// Return-value mutation and the shared impossibility predicate: a finding is
// claimed only for values the hardened relay provably must reject.

inline int64_t mutate_return(MutationStrategy s, int64_t original, int64_t count_cap,
                             uint64_t seed) {
    switch (s) {
    case MutationStrategy::InflateLength: return std::max<int64_t>(count_cap, 0) + 10;
    case MutationStrategy::SignFlip: return original == 0 ? -10 : -original;
    case MutationStrategy::BoundaryValue:
        return (seed & 1) ? int64_t(INT32_MAX) : int64_t(INT64_MAX);
    case MutationStrategy::Zero: return 0;
    case MutationStrategy::PartialSuccess:
        return original > 0 ? original / 2 : original;
    default: return original;
    }
}

// Would the hardened relay reject this return? Mirrors MiniTcon::relay.
inline bool return_impossible(int64_t nr, int64_t injected, int64_t count_cap) {
    if (injected < 0) {
        int64_t eno = -injected;
        return eno > 4095 || !errno_legal_for(nr, eno);
    }
    return injected > count_cap;
}

// ---------------------------------------------------------------------------
// Clock transform mutation (applied to the device file during ARMED).

inline ClockTransform mutate_clock(const ArmPlan& plan, const ClockTransform& current,
                                   int64_t now_real) {
    ClockTransform t = current;
    int64_t virt_now = current.virt_at(now_real);
    switch (plan.rule->strategy) {
    case MutationStrategy::SkewRate:
        t.base_real = now_real;
        t.base_virt = virt_now;
        t.rate_num = plan.rate_num;
        t.rate_den = plan.rate_den;
        break;
    case MutationStrategy::ReplayPrevious: // freeze: time stops advancing
        t.base_virt = virt_now;
        t.frozen = 1;
        break;
    case MutationStrategy::Zero: // rebase: virtual clock restarts at zero
        t.base_real = now_real;
        t.base_virt = 0;
        t.rate_num = 1;
        t.rate_den = 1;
        break;
    default: break;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Snapshot ring for store rollback: the monitor keeps the last few observed
// backing images and re-publishes one during ARMED.

class SnapshotRing {
  public:
    explicit SnapshotRing(size_t cap = 4) : cap_(cap) {}

    void capture(const std::vector<uint8_t>& image, int64_t marker_cycle) {
        ring_.push_back({image, marker_cycle});
        if (ring_.size() > cap_) ring_.erase(ring_.begin());
    }

    // back==0: latest; back==1: one flush older; nullopt if not deep enough.
    struct Entry {
        std::vector<uint8_t> image;
        int64_t marker_cycle;
    };
    std::optional<Entry> pick(int64_t back) const {
        if (ring_.empty() || back >= int64_t(ring_.size())) return std::nullopt;
        return ring_[ring_.size() - 1 - size_t(back)];
    }

    size_t size() const { return ring_.size(); }

  private:
    size_t cap_;
    std::vector<Entry> ring_;
};

} // namespace tbk
