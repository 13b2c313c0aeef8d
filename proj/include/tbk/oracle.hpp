#pragma once
// Total return-contract oracle for the syscall corpus, plus side-condition
// checks judged against recorded post-state. Every rule carries the finding
// category and trigger used when it is violated; rules for seeded bugs use
// the canonical trigger strings so dedup keys line up across witnesses.

#include <cerrno>
#include <optional>
#include <string>
#include <vector>

#include "tbk/cases.hpp"
#include "tbk/profile.hpp"
#include "tbk/registry.hpp"
#include "tbk/types.hpp"

namespace tbk {

enum class OutcomeKind : uint8_t { Success, Err, Unconstrained };

struct SideCond {
    std::string name; // evaluator id
    std::string trigger;
    Category category;
};

struct ExpectedOutcome {
    OutcomeKind kind = OutcomeKind::Unconstrained;
    std::vector<int64_t> errnos; // acceptable (positive) errno values
    int64_t lo = 0, hi = 0;      // inclusive success-return range
    std::string rule;            // trigger id for a return violation
    Category violation_category = Category::ImproperReturn;
    std::vector<SideCond> side;

    static ExpectedOutcome success(int64_t lo, int64_t hi, std::string rule) {
        ExpectedOutcome e;
        e.kind = OutcomeKind::Success;
        e.lo = lo;
        e.hi = hi;
        e.rule = std::move(rule);
        return e;
    }
    static ExpectedOutcome err(int64_t eno, std::string rule,
                               Category cat = Category::ImproperReturn) {
        ExpectedOutcome e;
        e.kind = OutcomeKind::Err;
        e.errnos = {eno};
        e.rule = std::move(rule);
        e.violation_category = cat;
        return e;
    }

    ExpectedOutcome& with_side(std::string name, std::string trigger, Category cat) {
        side.push_back({std::move(name), std::move(trigger), cat});
        return *this;
    }
};

struct Violation {
    Category category;
    std::string subsystem;
    std::string trigger;
    std::string description;
};

// ---------------------------------------------------------------------------
// Per-syscall expected outcome. Total over the generator's case space; the
// Unconstrained fallback exists for defensive completeness only.

inline ExpectedOutcome expected_for(const TestCase& tc, const TconLimits& limits) {
    auto file_len = [&] { return tc.geti("file_len", 0); };
    switch (tc.nr) {
    case NR_read: {
        int64_t count = tc.geti("count");
        if (count < 0) return ExpectedOutcome::err(EINVAL, "negative-count");
        if (tc.geti("fd_state") != kFdValid) return ExpectedOutcome::err(EBADF, "bad-fd");
        if (count == 0) return ExpectedOutcome::success(0, 0, "zero-count");
        return ExpectedOutcome::success(0, std::min(count, file_len()), "read-range");
    }
    case NR_pread64: {
        int64_t count = tc.geti("count"), off = tc.geti("off");
        if (count < 0) return ExpectedOutcome::err(EINVAL, "negative-count");
        if (off < 0) return ExpectedOutcome::err(EINVAL, "negative-offset");
        if (tc.geti("fd_state") != kFdValid) return ExpectedOutcome::err(EBADF, "bad-fd");
        if (count == 0 || off >= file_len())
            return ExpectedOutcome::success(0, 0, "zero-window");
        return ExpectedOutcome::success(0, std::min(count, file_len() - off), "read-range");
    }
    case NR_open: {
        const std::string path = tc.gets("path");
        if (path.empty()) return ExpectedOutcome::err(ENOENT, "empty-path");
        if (path.size() > 4095) return ExpectedOutcome::err(ENAMETOOLONG, "path-too-long");
        if (!tc.geti("exists") && !tc.geti("o_creat"))
            return ExpectedOutcome::err(ENOENT, "missing-path");
        return ExpectedOutcome::success(0, kFdMax, "open-fd");
    }
    case NR_readlinkat: {
        int64_t bufsiz = tc.geti("bufsiz");
        // bufsiz <= 0 is EINVAL; a success here is the seeded improper return.
        if (bufsiz == 0)
            return ExpectedOutcome::err(EINVAL, "bufsiz0-success");
        if (bufsiz < 0) return ExpectedOutcome::err(EINVAL, "negative-bufsiz");
        if (!tc.geti("exists")) return ExpectedOutcome::err(ENOENT, "missing-path");
        if (!tc.geti("is_symlink")) return ExpectedOutcome::err(EINVAL, "not-a-symlink");
        return ExpectedOutcome::success(0, bufsiz, "readlink-range");
    }
    case NR_sendfile: {
        int64_t count = tc.geti("count");
        if (tc.geti("out_state") == kFdWrongMode)
            // read-only out fd must fail; a success is the seeded improper return
            return ExpectedOutcome::err(EBADF, "readonly-outfd-success");
        if (tc.geti("out_state") != kFdValid || tc.geti("in_state") != kFdValid)
            return ExpectedOutcome::err(EBADF, "bad-fd");
        if (tc.geti("off_present") && tc.geti("off") < 0)
            return ExpectedOutcome::err(EINVAL, "negative-offset");
        if (count < 0) return ExpectedOutcome::err(EINVAL, "negative-count");
        int64_t off = tc.geti("off_present") ? tc.geti("off") : 0;
        int64_t avail = std::max<int64_t>(0, file_len() - off);
        return ExpectedOutcome::success(0, std::min(count, avail), "sendfile-range");
    }
    case NR_mmap: {
        int64_t len = tc.geti("len"), off = tc.geti("off");
        if (len <= 0) return ExpectedOutcome::err(EINVAL, "bad-length");
        if (len > kMmapMax) return ExpectedOutcome::err(ENOMEM, "over-arena-max");
        if (off < 0 || off % kPageSize) return ExpectedOutcome::err(EINVAL, "bad-offset");
        if (tc.geti("fd_state") != kFdValid) return ExpectedOutcome::err(EBADF, "bad-fd");
        auto e = ExpectedOutcome::success(0, INT64_MAX, "mmap-offset");
        if (off + len > file_len())
            e.with_side("zero-fill-tail", "stale-tail-beyond-eof",
                        Category::ZeroFillViolation);
        return e;
    }
    case NR_mprotect: {
        int64_t target = tc.geti("target");
        if (target == 2) return ExpectedOutcome::err(ENOMEM, "unmapped-range");
        if (target == 0 && tc.geti("add_write"))
            // write on a protected mapping must be refused; success = escalation
            return ExpectedOutcome::err(EACCES, "protected-mapping-gained-write",
                                        Category::PermEscalation);
        return ExpectedOutcome::success(0, 0, "mprotect-ok");
    }
    case NR_mremap: {
        if (tc.geti("target") == 1) return ExpectedOutcome::err(EFAULT, "unmapped-range");
        if (tc.geti("new_len") <= 0) return ExpectedOutcome::err(EINVAL, "bad-length");
        auto e = ExpectedOutcome::success(0, INT64_MAX, "mremap-offset");
        e.with_side("remap-accounting", "grow-size-accounting", Category::SizeMismatch);
        return e;
    }
    case NR_shmget: {
        int64_t size = tc.geti("size");
        if (size <= 0) return ExpectedOutcome::err(EINVAL, "bad-size");
        if (size > kShmMax) return ExpectedOutcome::err(EINVAL, "size-over-max");
        auto e = ExpectedOutcome::success(0, INT64_MAX, "shmget-id");
        e.with_side("shm-stat", "granted-vs-reported-size", Category::SizeMismatch);
        return e;
    }
    case NR_shmat: {
        if (tc.geti("id_state") != 0) return ExpectedOutcome::err(EINVAL, "bad-id");
        if (tc.geti("addr") != 0) return ExpectedOutcome::err(EINVAL, "fixed-address");
        return ExpectedOutcome::success(0, INT64_MAX, "shmat-offset");
    }
    case NR_shmctl: {
        if (tc.geti("id_state") != 0) return ExpectedOutcome::err(EINVAL, "bad-id");
        auto e = ExpectedOutcome::success(0, 0, "shmctl-ok");
        if (tc.geti("cmd") == 2 /* IPC_STAT */)
            e.with_side("shm-stat", "granted-vs-reported-size", Category::SizeMismatch);
        return e;
    }
    case NR_epoll_ctl: {
        switch (tc.variant) {
        case 0: // mutual-listen cycle attempt
            return ExpectedOutcome::err(ELOOP, "mutual-listen-deadlock", Category::DoS)
                .with_side("epoll-cycle", "mutual-listen-deadlock", Category::DoS);
        case 2: // nesting one past the limit
            return ExpectedOutcome::err(ELOOP, "unbounded-nesting",
                                        Category::ResourceExhaustion)
                .with_side("epoll-depth", "unbounded-nesting",
                           Category::ResourceExhaustion);
        case 3: return ExpectedOutcome::err(EBADF, "bad-epfd");
        case 4: return ExpectedOutcome::err(EBADF, "bad-fd");
        case 5: return ExpectedOutcome::err(ENOENT, "del-unknown");
        case 6: return ExpectedOutcome::err(EINVAL, "self-add");
        default: return ExpectedOutcome::success(0, 0, "epoll-add-ok");
        }
    }
    case NR_clock_getres: {
        if (tc.geti("clk") >= 16) return ExpectedOutcome::err(EINVAL, "bad-clock-id");
        auto e = ExpectedOutcome::success(0, 0, "getres-ok");
        e.with_side("clock-res", "host-controlled-time", Category::StaleClockAccepted);
        (void)limits;
        return e;
    }
    case NR_getpid:
        return ExpectedOutcome::success(kVirtPid, kVirtPid, "stable-virtual-pid");
    default: {
        ExpectedOutcome e;
        e.rule = "unconstrained";
        return e;
    }
    }
}

// ---------------------------------------------------------------------------
// Judgment. Return violations first, then side conditions (which fire even
// when the return conformed: granting + mis-reporting both return 0).

inline std::optional<Violation> judge_return(const TestCase& tc, const ExpectedOutcome& exp,
                                             int64_t ret) {
    const std::string subsystem = corpus().name_of(tc.nr);
    auto viol = [&](std::string desc) {
        return Violation{exp.violation_category, subsystem, exp.rule, std::move(desc)};
    };
    switch (exp.kind) {
    case OutcomeKind::Success:
        if (ret < 0)
            return viol("expected success in [" + std::to_string(exp.lo) + "," +
                        std::to_string(exp.hi) + "], got errno " + std::to_string(-ret));
        if (ret < exp.lo || ret > exp.hi)
            return viol("return " + std::to_string(ret) + " outside [" +
                        std::to_string(exp.lo) + "," + std::to_string(exp.hi) + "]");
        return std::nullopt;
    case OutcomeKind::Err: {
        for (int64_t e : exp.errnos)
            if (ret == -e) return std::nullopt;
        std::string want;
        for (int64_t e : exp.errnos) want += (want.empty() ? "" : "|") + std::to_string(e);
        return viol("expected errno " + want + ", got " +
                    (ret >= 0 ? "success " + std::to_string(ret)
                              : "errno " + std::to_string(-ret)));
    }
    case OutcomeKind::Unconstrained: return std::nullopt;
    }
    return std::nullopt;
}

inline std::vector<Violation> judge_side(const TestCase& tc, const ExpectedOutcome& exp,
                                         const PostState& post) {
    std::vector<Violation> out;
    const std::string subsystem_sys = corpus().name_of(tc.nr);
    auto add = [&](const SideCond& c, std::string subsystem, std::string desc) {
        out.push_back({c.category, std::move(subsystem), c.trigger, std::move(desc)});
    };
    for (const SideCond& c : exp.side) {
        if (c.name == "zero-fill-tail") {
            if (!post.map) continue;
            const MapObs& m = *post.map;
            int64_t backed = std::max<int64_t>(
                0, std::min(m.requested_len, m.file_len - tc.geti("off")));
            bool stale = false;
            for (uint8_t b : m.tail_sample)
                if (b != 0) stale = true;
            if (stale)
                add(c, "mmap",
                    "mapping bytes beyond backing EOF not zeroed (stale data visible)");
            else if (m.fill_count > backed)
                add(c, "mmap",
                    "content fill reported " + std::to_string(m.fill_count) +
                        " bytes but only " + std::to_string(backed) + " are file-backed");
        } else if (c.name == "remap-accounting") {
            if (!post.remap) continue;
            if (post.remap->accounted != post.remap->requested_new)
                add(c, "mremap",
                    "remap to " + std::to_string(post.remap->requested_new) +
                        " succeeded but accounting shows " +
                        std::to_string(post.remap->accounted));
        } else if (c.name == "shm-stat") {
            if (!post.shm) continue;
            if (post.shm->reported != post.shm->requested)
                add(c, "shm",
                    "segment created with " + std::to_string(post.shm->requested) +
                        " bytes but stat reports " + std::to_string(post.shm->reported) +
                        " (granted " + std::to_string(post.shm->granted) + ")");
        } else if (c.name == "epoll-cycle") {
            if (!post.epoll) continue;
            bool deadlocked = post.epoll->wait_result &&
                              *post.epoll->wait_result == EpollWaitResult::WatchdogDeadlock;
            if (post.epoll->cycle_accepted || deadlocked)
                add(c, "epoll",
                    std::string("mutual-listen registration accepted") +
                        (deadlocked ? "; wait deadlocked until watchdog" : ""));
        } else if (c.name == "epoll-depth") {
            if (!post.epoll) continue;
            if (post.epoll->accepted_depth > post.epoll->limit)
                add(c, "epoll",
                    "nesting depth " + std::to_string(post.epoll->accepted_depth) +
                        " accepted, limit " + std::to_string(post.epoll->limit));
        } else if (c.name == "clock-res") {
            if (!post.clock) continue;
            if (post.clock->res_ns != post.clock->documented_res_ns)
                add(c, "clock",
                    "clock_getres reported " + std::to_string(post.clock->res_ns) +
                        "ns, documented resolution is " +
                        std::to_string(post.clock->documented_res_ns) + "ns");
        } else {
            throw Error("oracle: unknown side condition '" + c.name + "'");
        }
    }
    (void)subsystem_sys;
    return out;
}

inline std::vector<Violation> judge_case(const TestCase& tc, const TconLimits& limits,
                                         int64_t ret, const PostState* post) {
    std::vector<Violation> out;
    ExpectedOutcome exp = expected_for(tc, limits);
    std::optional<Violation> retv = judge_return(tc, exp, ret);
    std::vector<Violation> side;
    if (post) side = judge_side(tc, exp, *post);
    // A side observation with the same category and trigger subsumes a plain
    // return mismatch: one defect, one violation (the side carries the richer
    // evidence, e.g. an accepted epoll cycle implies the missing ELOOP).
    if (retv) {
        bool subsumed = false;
        for (const Violation& s : side)
            subsumed |= s.category == retv->category && s.trigger == retv->trigger;
        if (!subsumed) out.push_back(*retv);
    }
    out.insert(out.end(), side.begin(), side.end());
    return out;
}

// Legal errno sets per syscall: used by the hardened relay to reject
// host-returned error codes the contract cannot produce (Iago sanitizing).
inline bool errno_legal_for(int64_t nr, int64_t eno) {
    switch (nr) {
    case NR_read:
    case NR_pread64: return eno == EBADF || eno == EINVAL || eno == EIO || eno == EFAULT ||
                            eno == EAGAIN || eno == EINTR || eno == EISDIR;
    case NR_open: return eno == ENOENT || eno == EACCES || eno == ENAMETOOLONG ||
                         eno == EEXIST || eno == EISDIR || eno == EMFILE || eno == EINVAL;
    case NR_readlinkat: return eno == EINVAL || eno == ENOENT || eno == EACCES ||
                               eno == ENAMETOOLONG || eno == EBADF;
    case NR_sendfile: return eno == EBADF || eno == EINVAL || eno == EIO || eno == EFAULT;
    default: return true; // internal calls never relay host errnos
    }
}

} // namespace tbk
