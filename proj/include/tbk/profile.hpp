#pragma once
// Target profiles: per-syscall handling policy, vulnerability toggles, limits.
// The policy table is identical across profiles; only toggles differ.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "tbk/registry.hpp"
#include "tbk/types.hpp"

namespace tbk {

inline constexpr int64_t kVirtPid = 1;

enum class PolicyKind : uint8_t { Internal, Translated, Forwarded };

inline const char* to_string(PolicyKind p) {
    switch (p) {
    case PolicyKind::Internal: return "internal";
    case PolicyKind::Translated: return "translated";
    case PolicyKind::Forwarded: return "forwarded";
    }
    return "?";
}

inline HandlingClass to_handling(PolicyKind p) {
    switch (p) {
    case PolicyKind::Internal: return HandlingClass::Internal;
    case PolicyKind::Translated: return HandlingClass::Translated;
    case PolicyKind::Forwarded: return HandlingClass::Forwarded;
    }
    return HandlingClass::Unknown;
}

struct Policy {
    PolicyKind kind = PolicyKind::Internal;
    int64_t translated_to = -1; // host syscall nr for Translated
};

struct TconLimits {
    int64_t heap_limit = 1 << 20;        // model heap for the OOM probe
    int64_t scratch_bytes = 64 * 1024;   // bounce-buffer cap (short reads legal)
    int64_t epoll_nesting_limit = 5;
    int64_t watchdog_ms = 2000;          // deadlock watchdog (simulated clock)
    int64_t cache_blocks = 8;            // protected-store LRU capacity
    int64_t documented_clock_res_ns = 1; // clock_getres contract value
};

// The 12 seeded vulnerability toggles.
inline constexpr std::array<const char*, 12> kToggleNames = {
    "improper_return_readlinkat",
    "improper_return_sendfile",
    "zero_fill_bug",
    "mprotect_bug",
    "mremap_bug",
    "shm_size_bug",
    "epoll_cycle_bug",
    "epoll_depth_bug",
    "clockres_bug",
    "pf_rollback_bug",
    "iago_bug",
    "virtq_oob_bug",
};

// Ground truth: the one deduplicated finding each toggle must produce when it
// alone is enabled. Campaign analysis never consults this table; tests do.
struct ToggleExpectation {
    const char* toggle;
    Category category;
    const char* subsystem;
    const char* trigger;
};

inline constexpr std::array<ToggleExpectation, 12> kToggleExpectations = {{
    {"improper_return_readlinkat", Category::ImproperReturn, "readlinkat", "bufsiz0-success"},
    {"improper_return_sendfile", Category::ImproperReturn, "sendfile", "readonly-outfd-success"},
    {"zero_fill_bug", Category::ZeroFillViolation, "mmap", "stale-tail-beyond-eof"},
    {"mprotect_bug", Category::PermEscalation, "mprotect", "protected-mapping-gained-write"},
    {"mremap_bug", Category::SizeMismatch, "mremap", "grow-size-accounting"},
    {"shm_size_bug", Category::SizeMismatch, "shm", "granted-vs-reported-size"},
    {"epoll_cycle_bug", Category::DoS, "epoll", "mutual-listen-deadlock"},
    {"epoll_depth_bug", Category::ResourceExhaustion, "epoll", "unbounded-nesting"},
    {"clockres_bug", Category::StaleClockAccepted, "clock", "host-controlled-time"},
    {"pf_rollback_bug", Category::RollbackAccepted, "pf", "stale-flush-accepted"},
    {"iago_bug", Category::IagoSilentCorruption, "host-boundary", "untrusted-value-consumed"},
    {"virtq_oob_bug", Category::OOBAccess, "virtq", "device-values-out-of-bounds"},
}};

inline std::string expected_dedup_key(const ToggleExpectation& e) {
    std::string k = category_slug(e.category);
    k += '|';
    k += e.subsystem;
    k += '|';
    k += e.trigger;
    return k;
}

struct TconProfile {
    std::string name;
    std::map<int64_t, Policy> policy; // keyed by corpus syscall nr
    std::map<std::string, bool> toggles;
    TconLimits limits;

    bool on(std::string_view toggle) const {
        auto it = toggles.find(std::string(toggle));
        if (it == toggles.end())
            throw Error("profile: unknown toggle '" + std::string(toggle) + "'");
        return it->second;
    }

    const Policy& policy_of(int64_t nr) const {
        auto it = policy.find(nr);
        if (it == policy.end())
            throw Error("profile: no policy for syscall " + std::to_string(nr));
        return it->second;
    }
};

inline std::map<int64_t, Policy> default_policy_table() {
    std::map<int64_t, Policy> p;
    auto internal = [&](int64_t nr) { p[nr] = {PolicyKind::Internal, -1}; };
    auto forwarded = [&](int64_t nr) { p[nr] = {PolicyKind::Forwarded, -1}; };
    internal(NR_getpid);
    internal(NR_clock_getres);
    internal(NR_mprotect);
    internal(NR_mremap);
    internal(NR_shmget);
    internal(NR_shmat);
    internal(NR_shmctl);
    internal(NR_epoll_ctl);
    p[NR_read] = {PolicyKind::Translated, NR_pread64};
    p[NR_mmap] = {PolicyKind::Translated, NR_pread64}; // content fill
    forwarded(NR_open);
    forwarded(NR_pread64);
    forwarded(NR_readlinkat);
    forwarded(NR_sendfile);
    return p;
}

inline std::vector<std::string> profile_preset_names() {
    std::vector<std::string> names = {"hardened", "vulnerable-all"};
    for (const char* t : kToggleNames) names.emplace_back(t);
    return names;
}

// Presets: "hardened" (all off), "vulnerable-all" (all on), or a single
// toggle name (that one on).
inline TconProfile profile_preset(const std::string& name) {
    TconProfile p;
    p.name = name;
    p.policy = default_policy_table();
    for (const char* t : kToggleNames) p.toggles[t] = false;
    if (name == "hardened") return p;
    if (name == "vulnerable-all") {
        for (auto& [k, v] : p.toggles) v = true;
        return p;
    }
    auto it = p.toggles.find(name);
    if (it == p.toggles.end())
        throw Error("unknown profile '" + name + "'", kExitUsage);
    it->second = true;
    return p;
}

} // namespace tbk
