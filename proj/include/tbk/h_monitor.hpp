#pragma once
// Host-side monitor: observes boundary crossings, arms at most one mutation
// per cycle during its ARMED window, and restores every mutated host surface
// during OBSERVED so effects stay cycle-local.
//
// The monitor never reads target internals: plans are re-derived from
// (seed, cycle) and all host actions touch only host-owned surfaces (the
// clock device file, the store backing file, syscall return values).

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "tbk/clock_device.hpp"
#include "tbk/generator.hpp"
#include "tbk/json_io.hpp"
#include "tbk/mutation.hpp"
#include "tbk/sync.hpp"

namespace tbk {

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& data) {
    std::string tmp = path + ".htmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("monitor: cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(data.data()),
                  std::streamsize(data.size()));
    }
    if (::rename(tmp.c_str(), path.c_str()) != 0)
        throw Error("monitor: rename failed for " + path);
}

// Plausibility cap the hardened relay enforces for a given crossing; the
// return-mutation judge uses the same bound, so "finding" means "the relay
// provably had to reject this".
inline int64_t plausible_cap(int64_t nr, const ValueTree& args) {
    auto geti = [&](const char* name) -> int64_t {
        const ValueTree* f = args.find(name);
        return (f && f->kind() == ValueTree::Kind::Int) ? f->as_int() : 0;
    };
    switch (nr) {
    case NR_read:
    case NR_pread64: return std::max<int64_t>(geti("count"), 0);
    case NR_readlinkat: return std::max<int64_t>(geti("bufsiz"), 0);
    case NR_sendfile: return std::max<int64_t>(geti("count"), 0);
    case NR_open: return kFdMax;
    default: return INT64_MAX;
    }
}

struct HMonitorConfig {
    GenConfig gen;
    Capabilities caps = sim_capabilities();
    std::vector<MutationRule> custom_rules;
    std::string group_id;
    std::string backing_path;
    std::string clockdev_path;
    std::string signal_path;
    std::string history_path;
    std::string h_log_path;
    int timeout_ms = kDefaultSyncTimeoutMs;
    bool append_logs = false;
    int64_t first_cycle = 0;
    int64_t cycles = 0;
    int64_t signal_seq_seed = 0;
};

class HSession {
  public:
    explicit HSession(HMonitorConfig cfg)
        : cfg_(std::move(cfg)), planner_(cfg_.gen, cfg_.caps, cfg_.custom_rules),
          chan_(cfg_.signal_path, cfg_.history_path, Side::H, cfg_.timeout_ms),
          log_(cfg_.h_log_path, cfg_.append_logs), clockdev_(cfg_.clockdev_path) {
        chan_.seed_seq(cfg_.signal_seq_seed);
    }

    const MutationPlanner& planner() const { return planner_; }

    void run() {
        for (const ProtocolStep& st : h_protocol(cfg_.first_cycle, cfg_.cycles)) {
            switch (st.kind) {
            case StepKind::Post: chan_.post(st.phase, st.cycle); break;
            case StepKind::Await: chan_.await(st.phase, st.cycle); break;
            case StepKind::Work:
                if (st.work == WorkKind::HArm) arm(st.cycle);
                else if (st.work == WorkKind::HObserve) observe(st.cycle);
                break;
            }
        }
    }

    // -- ARMED window: derive the plan, mutate host surfaces, annotate.

    void arm(int64_t cycle) {
        TestCase tc = make_case(cfg_.gen, cycle);
        ArmPlan p = planner_.plan(tc);
        {
            std::lock_guard<std::mutex> g(mu_);
            armed_cycle_ = cycle;
            armed_plan_ = p;
            armed_used_ = false;
            armed_case_name_ =
                tc.kind == CaseKind::Syscall ? corpus().name_of(tc.nr) : "";
        }
        if (!p.rule) return;
        switch (p.rule->target) {
        case MutationTarget::ClockSource: {
            ClockTransform cur = clockdev_.read();
            saved_clock_ = cur;
            clock_armed_ = true;
            int64_t now = int64_t(now_mono_ns());
            ClockTransform mut = mutate_clock(p, cur, now);
            clockdev_.write(mut);
            write_annotation({cycle, -1, *p.rule, rate_permille(cur), rate_permille(mut),
                              p.note});
            break;
        }
        case MutationTarget::SnapshotStore: {
            auto entry = ring_.pick(p.snapshot_back);
            if (!entry) break; // not enough committed history yet: no-op
            saved_backing_ = read_file_bytes(cfg_.backing_path);
            if (saved_backing_.empty()) break; // nothing committed on disk yet
            backing_armed_ = true;
            write_file_bytes(cfg_.backing_path, entry->image);
            write_annotation({cycle, -1, *p.rule, 0, p.snapshot_back, p.note});
            break;
        }
        case MutationTarget::VirtqDesc:
        case MutationTarget::DmaPage:
            // The adversarial device scenario is identified by the case
            // variant; the annotation marks the cycle as host-mutated.
            write_annotation({cycle, -1, *p.rule, 0, tc.variant, p.note});
            break;
        case MutationTarget::SyscallReturn:
            break; // applied at crossing time, annotated there
        }
    }

    // -- OBSERVED window: undo host-surface mutations, snapshot the store.

    void observe(int64_t cycle) {
        if (clock_armed_) {
            clockdev_.write(saved_clock_);
            clock_armed_ = false;
        }
        if (backing_armed_) {
            write_file_bytes(cfg_.backing_path, saved_backing_);
            backing_armed_ = false;
        }
        TestCase tc = make_case(cfg_.gen, cycle);
        if (tc.kind == CaseKind::PfProbe && tc.variant == 0) {
            auto img = read_file_bytes(cfg_.backing_path);
            if (!img.empty()) ring_.capture(img, cycle);
        }
    }

    // -- crossing observation, shared by the sim port and the tracer.
    // `args` must be captured before host execution (pointees may change).
    // Returns the value to deliver to the target (mutated at most once per
    // armed cycle).

    int64_t finish_cross(int64_t cycle, int64_t seq, int64_t nr, ValueTree args,
                         int64_t honest_ret) {
        std::lock_guard<std::mutex> g(mu_);
        BoundaryEvent ev;
        ev.side = Side::H;
        ev.cycle_id = cycle;
        ev.seq = seq;
        ev.group_id = cfg_.group_id;
        ev.syscall = nr;
        ev.args = std::move(args);
        ev.ret = honest_ret;
        ev.mono_ts = now_mono_ns();
        log_.write(to_json(ev));
        int64_t deliver = honest_ret;
        // The rule may name either side of a translation (e.g. "read" for a
        // crossing the runtime rewrote to pread64). Fixture setup never
        // crosses, so the armed cycle's sole crossing is the case's own call.
        if (armed_cycle_ == cycle && !armed_used_ && armed_plan_.rule &&
            armed_plan_.rule->target == MutationTarget::SyscallReturn &&
            (armed_plan_.rule->applies_to(corpus().name_of(nr)) ||
             armed_plan_.rule->applies_to(armed_case_name_))) {
            int64_t cap = plausible_cap(nr, ev.args);
            deliver = mutate_return(armed_plan_.rule->strategy, honest_ret, cap,
                                    armed_plan_.rule->seed);
            armed_used_ = true;
            Annotation a{cycle, seq, *armed_plan_.rule, honest_ret, deliver,
                         to_string(armed_plan_.rule->strategy)};
            log_.write(to_json(a));
        }
        return deliver;
    }

  private:
    static int64_t rate_permille(const ClockTransform& t) {
        if (t.frozen) return 0;
        return t.rate_num * 1000 / (t.rate_den ? t.rate_den : 1);
    }

    void write_annotation(const Annotation& a) {
        std::lock_guard<std::mutex> g(mu_);
        log_.write(to_json(a));
    }

    HMonitorConfig cfg_;
    MutationPlanner planner_;
    SignalChannel chan_;
    JsonlWriter log_;
    ClockDevice clockdev_;
    SnapshotRing ring_;

    std::mutex mu_;
    int64_t armed_cycle_ = -1;
    ArmPlan armed_plan_;
    bool armed_used_ = false;
    std::string armed_case_name_;

    ClockTransform saved_clock_;
    bool clock_armed_ = false;
    std::vector<uint8_t> saved_backing_;
    bool backing_armed_ = false;
};

// In-process boundary adapter: executes the crossing against the host OS and
// reports it to the session. set_context is called by the target thread
// before each cycle's execution; crossings happen on that same thread.

class SimPort : public BoundaryPort {
  public:
    explicit SimPort(HSession* session) : session_(session) {}

    void set_context(int64_t cycle, int64_t seq) override {
        cycle_ = cycle;
        seq_ = seq;
    }

    int64_t cross(const HostCall& c) override {
        DirectMemReader mem;
        ValueTree args = capture_host_args(c.nr, c.args, mem);
        int64_t honest = execute_host_call(c);
        return session_->finish_cross(cycle_, seq_, c.nr, std::move(args), honest);
    }

  private:
    HSession* session_;
    int64_t cycle_ = 0;
    int64_t seq_ = 0;
};

} // namespace tbk
