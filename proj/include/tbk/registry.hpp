#pragma once
// Syscall corpus: numbers, names, parameter schemas. Profile-independent;
// handling policy lives in profile.hpp.

#include <map>
#include <string>
#include <vector>

#include "tbk/types.hpp"

namespace tbk {

// x86_64 syscall numbers for the 14-call corpus.
inline constexpr int64_t NR_read = 0;
inline constexpr int64_t NR_open = 2;
inline constexpr int64_t NR_mmap = 9;
inline constexpr int64_t NR_mprotect = 10;
inline constexpr int64_t NR_pread64 = 17;
inline constexpr int64_t NR_mremap = 25;
inline constexpr int64_t NR_shmget = 29;
inline constexpr int64_t NR_shmat = 30;
inline constexpr int64_t NR_shmctl = 31;
inline constexpr int64_t NR_getpid = 39;
inline constexpr int64_t NR_sendfile = 40;
inline constexpr int64_t NR_clock_getres = 229;
inline constexpr int64_t NR_epoll_ctl = 233;
inline constexpr int64_t NR_readlinkat = 267;

enum class ArgKind : uint8_t {
    Int,     // plain scalar
    Fd,      // descriptor-like scalar
    Len,     // size/count scalar
    Offset,  // file offset scalar
    Flags,   // bitmask scalar
    PathIn,  // NUL-terminated inbound string
    BytesIn, // inbound buffer (captured)
    BufOut,  // outbound buffer (captured as null on both sides)
    PtrRec,  // inbound struct captured as a sub-record
};

inline bool arg_is_inbound(ArgKind k) { return k != ArgKind::BufOut; }

struct ParamSchema {
    std::string name;
    ArgKind kind = ArgKind::Int;
};

struct SyscallSpec {
    int64_t nr = -1;
    std::string name;
    std::vector<ParamSchema> params;
};

class SyscallRegistry {
  public:
    void add(SyscallSpec spec) {
        if (by_nr_.count(spec.nr))
            throw Error("registry: duplicate syscall nr " + std::to_string(spec.nr));
        if (by_name_.count(spec.name))
            throw Error("registry: duplicate syscall name " + spec.name);
        by_name_[spec.name] = spec.nr;
        by_nr_.emplace(spec.nr, std::move(spec));
    }

    const SyscallSpec* find(int64_t nr) const {
        auto it = by_nr_.find(nr);
        return it == by_nr_.end() ? nullptr : &it->second;
    }

    const SyscallSpec& at(int64_t nr) const {
        const SyscallSpec* s = find(nr);
        if (!s) throw Error("registry: unknown syscall nr " + std::to_string(nr));
        return *s;
    }

    const SyscallSpec* find(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        return it == by_name_.end() ? nullptr : find(it->second);
    }

    std::string name_of(int64_t nr) const {
        const SyscallSpec* s = find(nr);
        return s ? s->name : std::to_string(nr);
    }

    size_t size() const { return by_nr_.size(); }

    // Stable iteration order (by number).
    const std::map<int64_t, SyscallSpec>& all() const { return by_nr_; }

  private:
    std::map<int64_t, SyscallSpec> by_nr_;
    std::map<std::string, int64_t> by_name_;
};

inline SyscallRegistry make_corpus() {
    using K = ArgKind;
    SyscallRegistry r;
    r.add({NR_read, "read", {{"fd", K::Fd}, {"buf", K::BufOut}, {"count", K::Len}}});
    r.add({NR_open, "open", {{"path", K::PathIn}, {"flags", K::Flags}, {"mode", K::Int}}});
    r.add({NR_mmap,
           "mmap",
           {{"addr", K::Int},
            {"len", K::Len},
            {"prot", K::Flags},
            {"flags", K::Flags},
            {"fd", K::Fd},
            {"off", K::Offset}}});
    r.add({NR_mprotect, "mprotect", {{"addr", K::Int}, {"len", K::Len}, {"prot", K::Flags}}});
    r.add({NR_pread64,
           "pread64",
           {{"fd", K::Fd}, {"buf", K::BufOut}, {"count", K::Len}, {"off", K::Offset}}});
    r.add({NR_mremap,
           "mremap",
           {{"addr", K::Int}, {"old_len", K::Len}, {"new_len", K::Len}, {"flags", K::Flags}}});
    r.add({NR_shmget, "shmget", {{"key", K::Int}, {"size", K::Len}, {"flag", K::Flags}}});
    r.add({NR_shmat, "shmat", {{"id", K::Fd}, {"addr", K::Int}, {"flag", K::Flags}}});
    r.add({NR_shmctl, "shmctl", {{"id", K::Fd}, {"cmd", K::Int}, {"buf", K::BufOut}}});
    r.add({NR_getpid, "getpid", {}});
    r.add({NR_sendfile,
           "sendfile",
           {{"out_fd", K::Fd}, {"in_fd", K::Fd}, {"off", K::PtrRec}, {"count", K::Len}}});
    r.add({NR_clock_getres, "clock_getres", {{"clk", K::Int}, {"res", K::BufOut}}});
    r.add({NR_epoll_ctl,
           "epoll_ctl",
           {{"epfd", K::Fd}, {"op", K::Int}, {"fd", K::Fd}, {"event", K::PtrRec}}});
    r.add({NR_readlinkat,
           "readlinkat",
           {{"dirfd", K::Fd}, {"path", K::PathIn}, {"buf", K::BufOut}, {"bufsiz", K::Len}}});
    return r;
}

inline const SyscallRegistry& corpus() {
    static const SyscallRegistry r = make_corpus();
    return r;
}

} // namespace tbk
