#pragma once
// TestCase: the declarative unit both sides and the analyzer can regenerate
// deterministically from (seed, cycle). Named parameters carry setup facts
// (fixture sizes, fd validity) alongside syscall arguments so the offline
// oracle never has to guess environment state.

#include <map>
#include <string>

#include "tbk/types.hpp"

namespace tbk {

inline constexpr int64_t kPageSize = 4096;
inline constexpr int64_t kShmMax = 8 << 20;
inline constexpr int64_t kFdMax = 1 << 20;
inline constexpr int64_t kMmapMax = 1 << 20;

enum class CaseKind : uint8_t { Syscall, PfProbe, VirtqProbe, ClockProbe, AllocProbe };

inline const char* to_string(CaseKind k) {
    switch (k) {
    case CaseKind::Syscall: return "syscall";
    case CaseKind::PfProbe: return "pf_probe";
    case CaseKind::VirtqProbe: return "virtq_probe";
    case CaseKind::ClockProbe: return "clock_probe";
    case CaseKind::AllocProbe: return "alloc_probe";
    }
    return "?";
}

// fd fixture states used by cases that take a descriptor.
enum FdState : int64_t { kFdValid = 0, kFdClosed = 1, kFdWrongMode = 2 };

struct TestCase {
    CaseKind kind = CaseKind::Syscall;
    int64_t nr = -1; // corpus number (Syscall) or pseudo id (probes)
    int64_t cycle_id = 0;
    int variant = 0; // edge index / probe scenario
    bool variant_random = false; // past the edge region: params are jittered
    uint64_t case_seed = 0;
    std::map<std::string, int64_t> num;
    std::map<std::string, std::string> str;

    int64_t geti(const std::string& k, int64_t dflt = 0) const {
        auto it = num.find(k);
        return it == num.end() ? dflt : it->second;
    }
    std::string gets(const std::string& k, std::string dflt = "") const {
        auto it = str.find(k);
        return it == str.end() ? dflt : it->second;
    }
    bool has(const std::string& k) const { return num.count(k) || str.count(k); }
};

} // namespace tbk
