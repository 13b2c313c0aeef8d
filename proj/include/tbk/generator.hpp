#pragma once
// Deterministic case generation. The deck scheduler walks all case kinds in
// shuffled blocks (every kind exactly once per block), so per-kind ordinals
// equal the block index and every syscall structurally receives its share of
// the budget. Edge variants come first, then seeded random sampling around
// the same tables. make_case(seed, cycle) is a pure O(1) function — replay
// and host-side plan derivation regenerate cases without shared state.

#include <string>
#include <vector>

#include <fcntl.h>

#include "tbk/cases.hpp"
#include "tbk/registry.hpp"
#include "tbk/rng.hpp"

namespace tbk {

struct DeckKind {
    CaseKind kind = CaseKind::Syscall;
    int64_t nr = -1;
};

inline const std::vector<DeckKind>& deck(bool include_virtq) {
    static const std::vector<DeckKind> full = {
        {CaseKind::Syscall, NR_read},      {CaseKind::Syscall, NR_open},
        {CaseKind::Syscall, NR_mmap},      {CaseKind::Syscall, NR_mprotect},
        {CaseKind::Syscall, NR_pread64},   {CaseKind::Syscall, NR_mremap},
        {CaseKind::Syscall, NR_shmget},    {CaseKind::Syscall, NR_shmat},
        {CaseKind::Syscall, NR_shmctl},    {CaseKind::Syscall, NR_getpid},
        {CaseKind::Syscall, NR_sendfile},  {CaseKind::Syscall, NR_clock_getres},
        {CaseKind::Syscall, NR_epoll_ctl}, {CaseKind::Syscall, NR_readlinkat},
        {CaseKind::PfProbe, kPseudoPfProbe},
        {CaseKind::VirtqProbe, kPseudoVirtqProbe},
        {CaseKind::ClockProbe, kPseudoClockProbe},
    };
    static const std::vector<DeckKind> no_virtq = [] {
        std::vector<DeckKind> v;
        for (const auto& k : full)
            if (k.kind != CaseKind::VirtqProbe) v.push_back(k);
        return v;
    }();
    return include_virtq ? full : no_virtq;
}

inline int edge_count(const DeckKind& k) {
    switch (k.kind) {
    case CaseKind::PfProbe: return 2;
    case CaseKind::VirtqProbe: return 6;
    case CaseKind::ClockProbe: return 2;
    case CaseKind::AllocProbe: return 1;
    case CaseKind::Syscall: break;
    }
    switch (k.nr) {
    case NR_read: return 7;
    case NR_pread64: return 7;
    case NR_open: return 7;
    case NR_readlinkat: return 6;
    case NR_sendfile: return 6;
    case NR_mmap: return 7;
    case NR_mprotect: return 5;
    case NR_mremap: return 5;
    case NR_shmget: return 6;
    case NR_shmat: return 3;
    case NR_shmctl: return 3;
    case NR_epoll_ctl: return 7;
    case NR_clock_getres: return 2;
    case NR_getpid: return 1;
    default: return 1;
    }
}

// Shared edge tables (documented contract: deterministic, frozen).
inline const std::vector<int64_t>& edge_lengths() {
    static const std::vector<int64_t> v = {0, 1, 100, 4096, 4097, (1ll << 31) - 1};
    return v;
}

inline const std::vector<int64_t>& edge_file_lens() {
    static const std::vector<int64_t> v = {0, 1, 100, 4096, 4097};
    return v;
}

struct GenConfig {
    uint64_t seed = 0;
    bool include_virtq = true;
};

inline int64_t block_of(const GenConfig& cfg, int64_t cycle) {
    return cycle / int64_t(deck(cfg.include_virtq).size());
}

inline DeckKind kind_of(const GenConfig& cfg, int64_t cycle) {
    const auto& d = deck(cfg.include_virtq);
    int64_t block = cycle / int64_t(d.size());
    int64_t pos = cycle % int64_t(d.size());
    std::vector<int> order(d.size());
    for (size_t i = 0; i < d.size(); i++) order[i] = int(i);
    Rng rng = Rng::at(cfg.seed, 0xDECCull, uint64_t(block));
    rng.shuffle(order);
    return d[size_t(order[size_t(pos)])];
}

// Per-kind ordinal: how many cycles of this kind preceded this one. With the
// block scheduler that is exactly the block index.
inline int64_t ordinal_of(const GenConfig& cfg, int64_t cycle) { return block_of(cfg, cycle); }

namespace detail {

inline void gen_read(TestCase& tc, int variant, Rng& rng, bool pread) {
    int64_t counts[] = {10, 0, 10, 10, -1, 4096, (1ll << 31) - 1};
    int64_t fd_states[] = {kFdValid, kFdValid, kFdClosed, kFdWrongMode,
                           kFdValid, kFdValid, kFdValid};
    tc.num["file_len"] = 100;
    if (!pread) {
        switch (variant) {
        case 0: case 1: case 2: case 3: case 4: case 5: case 6:
            tc.num["count"] = counts[variant];
            tc.num["fd_state"] = fd_states[variant];
            break;
        }
        if (variant >= 5) tc.num["file_len"] = variant == 6 ? 100 : 4097;
    } else {
        switch (variant) {
        case 0: tc.num["count"] = 10; tc.num["off"] = 0; break;
        case 1: tc.num["count"] = 10; tc.num["off"] = 50; break;
        case 2: tc.num["count"] = 10; tc.num["off"] = 4096; break;
        case 3: tc.num["count"] = 10; tc.num["off"] = -1; break;
        case 4: tc.num["count"] = 0;  tc.num["off"] = 0; break;
        case 5: tc.num["count"] = 10; tc.num["off"] = 0;
                tc.num["fd_state"] = kFdClosed; break;
        case 6: tc.num["count"] = 4096; tc.num["off"] = 0;
                tc.num["file_len"] = 4097; break;
        }
        if (!tc.num.count("fd_state")) tc.num["fd_state"] = kFdValid;
        if (!tc.num.count("off")) tc.num["off"] = 0;
    }
    if (!tc.num.count("fd_state")) tc.num["fd_state"] = kFdValid;
    // random region: jitter the scalars inside legal model ranges
    if (tc.variant_random) {
        tc.num["count"] = rng.chance(1, 4) ? rng.pick(edge_lengths())
                                           : rng.range(0, 8192);
        tc.num["file_len"] = rng.pick(edge_file_lens());
        tc.num["fd_state"] = rng.chance(7, 10) ? kFdValid
                             : rng.chance(1, 2) ? kFdClosed
                                                : kFdWrongMode;
        if (pread) tc.num["off"] = rng.chance(1, 5) ? -1 : rng.range(0, 4200);
    }
}

} // namespace detail

// The epoll depth probe builds a chain this deep; must exceed the hardened
// nesting limit by a margin.
inline constexpr int64_t kDepthProbeTarget = 8;

inline TestCase make_case(const GenConfig& cfg, int64_t cycle, const DeckKind& k) {
    TestCase tc;
    tc.kind = k.kind;
    tc.nr = k.nr;
    tc.cycle_id = cycle;
    tc.case_seed = mix(cfg.seed, 0xCA5Eull, uint64_t(cycle));
    Rng rng(tc.case_seed);
    int64_t ordinal = ordinal_of(cfg, cycle);
    int edges = edge_count(k);
    bool random_region = ordinal >= edges;
    tc.variant = random_region ? int(rng.below(uint64_t(edges))) : int(ordinal);
    tc.variant_random = random_region;
    tc.num["ordinal"] = ordinal;

    switch (k.kind) {
    case CaseKind::PfProbe:
        // alternate: write batch (0), read-verify (1)
        tc.variant = int(ordinal % 2);
        tc.num["blocks"] = 9; // one past the cache capacity
        return tc;
    case CaseKind::VirtqProbe:
        tc.variant = int(ordinal % 6);
        tc.num["ring"] = 8;
        tc.num["arena"] = 4096;
        return tc;
    case CaseKind::ClockProbe:
        tc.variant = int(ordinal % 2); // 0 plain, 1 armed by the host plan
        tc.num["samples"] = 3;
        return tc;
    case CaseKind::AllocProbe:
        tc.num["chunk"] = 64 * 1024;
        return tc;
    case CaseKind::Syscall: break;
    }

    switch (k.nr) {
    case NR_read: detail::gen_read(tc, tc.variant, rng, false); break;
    case NR_pread64: detail::gen_read(tc, tc.variant, rng, true); break;
    case NR_open: {
        std::string base = "c" + std::to_string(cycle) + "_f";
        switch (tc.variant) {
        case 0: tc.str["path"] = base; tc.num["exists"] = 1; tc.num["flags"] = O_RDONLY; break;
        case 1: tc.str["path"] = ""; tc.num["exists"] = 0; tc.num["flags"] = O_RDONLY; break;
        case 2: tc.str["path"] = base + "_missing"; tc.num["exists"] = 0;
                tc.num["flags"] = O_RDONLY; break;
        case 3: tc.str["path"] = base + "_new"; tc.num["exists"] = 0;
                tc.num["flags"] = O_CREAT | O_WRONLY; tc.num["o_creat"] = 1; break;
        case 4: tc.str["path"] = std::string(4200, 'x'); tc.num["exists"] = 0;
                tc.num["flags"] = O_RDONLY; break;
        case 5: {
            std::string longname = base;
            longname.resize(255, 'a');
            tc.str["path"] = longname;
            tc.num["exists"] = 1;
            tc.num["flags"] = O_RDONLY;
            break;
        }
        case 6: tc.str["path"] = base; tc.num["exists"] = 1; tc.num["flags"] = O_RDWR; break;
        }
        tc.num["file_len"] = 100;
        tc.num["mode"] = 0644;
        break;
    }
    case NR_readlinkat: {
        int64_t bufs[] = {0, 64, 1, 64, 64, -1};
        tc.num["bufsiz"] = bufs[tc.variant];
        tc.num["exists"] = tc.variant == 4 ? 0 : 1;
        tc.num["is_symlink"] = (tc.variant == 3 || tc.variant == 4) ? 0 : 1;
        if (tc.variant_random) tc.num["bufsiz"] = rng.pick<int64_t>({0, 1, 8, 64, 4096, -1});
        tc.str["link_target"] = "t" + std::to_string(cycle % 7) + "_target";
        break;
    }
    case NR_sendfile: {
        tc.num["file_len"] = 100;
        tc.num["count"] = 10;
        tc.num["out_state"] = kFdValid;
        tc.num["in_state"] = kFdValid;
        tc.num["off_present"] = 0;
        switch (tc.variant) {
        case 0: tc.num["out_state"] = kFdWrongMode; break; // read-only out fd
        case 1: break;
        case 2: tc.num["count"] = 0; break;
        case 3: tc.num["in_state"] = kFdClosed; break;
        case 4: tc.num["off_present"] = 1; tc.num["off"] = -1; break;
        case 5: tc.num["count"] = (1ll << 31) - 1; break;
        }
        if (tc.variant_random) tc.num["count"] = rng.range(0, 200);
        break;
    }
    case NR_mmap: {
        tc.num["file_len"] = 100;
        tc.num["fd_state"] = kFdValid;
        tc.num["off"] = 0;
        switch (tc.variant) {
        case 0: tc.num["len"] = 4096; break; // tail beyond EOF: zero-fill witness
        case 1: tc.num["len"] = 100; break;
        case 2: tc.num["len"] = 0; break;
        case 3: tc.num["len"] = 4096; tc.num["fd_state"] = kFdClosed; break;
        case 4: tc.num["len"] = 4096; tc.num["off"] = 4096; break;
        case 5: tc.num["len"] = 4096; tc.num["off"] = 1; break;
        case 6: tc.num["len"] = kMmapMax + 1; break;
        }
        if (tc.variant_random) {
            tc.num["len"] = rng.pick<int64_t>({1, 100, 4096, 8192});
            tc.num["off"] = rng.chance(1, 3) ? 4096 : 0;
            tc.num["file_len"] = rng.pick<int64_t>({0, 100, 4096});
        }
        break;
    }
    case NR_mprotect: {
        // target: 0 protected RO mapping, 1 plain RW mapping, 2 unmapped
        int64_t targets[] = {0, 0, 2, 1, 1};
        int64_t writes[] = {1, 0, 1, 1, 0};
        tc.num["target"] = targets[tc.variant];
        tc.num["add_write"] = writes[tc.variant];
        tc.num["len"] = 4096;
        break;
    }
    case NR_mremap: {
        tc.num["target"] = tc.variant == 2 ? 1 : 0;
        tc.num["old_len"] = 4096;
        int64_t news[] = {8192, 1024, 8192, 0, 4096};
        tc.num["new_len"] = news[tc.variant];
        if (tc.variant_random && tc.num["target"] == 0)
            tc.num["new_len"] = rng.pick<int64_t>({1024, 4096, 8192, 16384});
        break;
    }
    case NR_shmget: {
        int64_t sizes[] = {4000, 4096, 0, -1, 9000, kShmMax + 1};
        tc.num["size"] = sizes[tc.variant];
        if (tc.variant_random) tc.num["size"] = rng.pick<int64_t>({4000, 4096, 1, 9000});
        break;
    }
    case NR_shmat: {
        tc.num["id_state"] = tc.variant == 2 ? 1 : 0;
        tc.num["addr"] = tc.variant == 1 ? 0x5000 : 0;
        tc.num["size"] = 4000;
        break;
    }
    case NR_shmctl: {
        tc.num["id_state"] = tc.variant == 1 ? 1 : 0;
        tc.num["cmd"] = tc.variant == 2 ? 0 /*IPC_RMID*/ : 2 /*IPC_STAT*/;
        tc.num["size"] = 4000;
        break;
    }
    case NR_epoll_ctl: {
        tc.num["depth"] = kDepthProbeTarget;
        break; // variant alone drives the scenario
    }
    case NR_clock_getres: {
        tc.num["clk"] = tc.variant == 1 ? 999 : 1;
        break;
    }
    case NR_getpid: break;
    }
    return tc;
}

inline TestCase make_case(const GenConfig& cfg, int64_t cycle) {
    return make_case(cfg, cycle, kind_of(cfg, cycle));
}

} // namespace tbk
