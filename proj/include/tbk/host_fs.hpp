#pragma once
// Host side of the boundary: a sandbox rootfs directory for fixtures, a raw
// syscall wrapper, and the BoundaryPort interface the relay crosses through.
//
// Paths stay relative to the rootfs and the target process chdir()s into it,
// so forwarded calls carry byte-identical path arguments on both sides.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <dirent.h>
#include <errno.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <unistd.h>

#include "tbk/registry.hpp"
#include "tbk/types.hpp"

namespace tbk {

// Raw host syscall; returns -errno on failure like the kernel ABI.
inline int64_t raw_syscall(int64_t nr, int64_t a0 = 0, int64_t a1 = 0, int64_t a2 = 0,
                           int64_t a3 = 0, int64_t a4 = 0, int64_t a5 = 0) {
    // The libc wrapper folds kernel returns in [-4095,-1] into -1/errno; any
    // other negative value (possible when a tracer rewrites rax) comes back
    // verbatim and must not be mistaken for an errno return.
    errno = 0;
    int64_t r = ::syscall(long(nr), a0, a1, a2, a3, a4, a5);
    if (r == -1 && errno != 0) return -int64_t(errno);
    return r;
}

class HostFs {
  public:
    HostFs() = default;
    explicit HostFs(std::string root) : root_(std::move(root)) {
        ::mkdir(root_.c_str(), 0755);
    }

    const std::string& root() const { return root_; }

    std::string abs(const std::string& rel) const { return root_ + "/" + rel; }

    void write_file(const std::string& rel, const std::vector<uint8_t>& data) const {
        std::string p = abs(rel);
        int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd < 0) throw Error("fixture: cannot create " + p);
        if (::write(fd, data.data(), data.size()) != ssize_t(data.size())) {
            ::close(fd);
            throw Error("fixture: short write to " + p);
        }
        ::close(fd);
    }

    void symlink_to(const std::string& target, const std::string& link_rel) const {
        std::string p = abs(link_rel);
        ::unlink(p.c_str());
        if (::symlink(target.c_str(), p.c_str()) != 0)
            throw Error("fixture: cannot symlink " + p);
    }

    void unlink(const std::string& rel) const { ::unlink(abs(rel).c_str()); }

    // Drop every entry whose name starts with prefix (crash-leftover cleanup).
    int remove_prefix(const std::string& prefix) const {
        DIR* d = ::opendir(root_.c_str());
        if (!d) return 0;
        int removed = 0;
        std::vector<std::string> victims;
        while (dirent* e = ::readdir(d)) {
            std::string name = e->d_name;
            if (name.rfind(prefix, 0) == 0) victims.push_back(name);
        }
        ::closedir(d);
        for (const auto& v : victims) {
            ::unlink(abs(v).c_str());
            removed++;
        }
        return removed;
    }

    int64_t file_size(const std::string& rel) const {
        struct stat st;
        if (::stat(abs(rel).c_str(), &st) != 0) return -int64_t(errno);
        return st.st_size;
    }

    int count_entries() const {
        DIR* d = ::opendir(root_.c_str());
        if (!d) return 0;
        int n = 0;
        while (dirent* e = ::readdir(d)) {
            std::string name = e->d_name;
            if (name != "." && name != "..") n++;
        }
        ::closedir(d);
        return n;
    }

  private:
    std::string root_;
};

// Deterministic fixture content: offset-dependent pattern salted by cycle so
// stale data is distinguishable from fresh zeroes and across cycles.
inline std::vector<uint8_t> fixture_bytes(int64_t len, int64_t cycle) {
    std::vector<uint8_t> v(static_cast<size_t>(std::max<int64_t>(len, 0)));
    for (size_t i = 0; i < v.size(); i++) v[i] = uint8_t(int64_t(i) * 31 + cycle * 7 + 1);
    return v;
}

// ---------------------------------------------------------------------------
// One host-boundary traversal. The relay fills nr/args; the port executes it
// host-side and returns the (possibly mutated) return value.

struct HostCall {
    int64_t nr = 0;
    std::array<int64_t, 6> args{};
};

// Executes a crossing against the real host OS. Shared by the sim port
// (in-process) and the trace-mode child (between marker brackets).
inline int64_t execute_host_call(const HostCall& c) {
    return raw_syscall(c.nr, c.args[0], c.args[1], c.args[2], c.args[3], c.args[4],
                       c.args[5]);
}

class BoundaryPort {
  public:
    virtual ~BoundaryPort() = default;
    // The agent announces the (cycle, seq) every subsequent crossing belongs
    // to, so host-side events correlate without a data channel.
    virtual void set_context(int64_t cycle, int64_t seq) {
        (void)cycle;
        (void)seq;
    }
    // Called by the relay exactly once per Translated/Forwarded guest call.
    virtual int64_t cross(const HostCall& call) = 0;
};

// A port that executes crossings without observing them (unit tests, plain
// target runs outside a campaign).
class NullPort : public BoundaryPort {
  public:
    int64_t cross(const HostCall& c) override { return execute_host_call(c); }
};

// ---------------------------------------------------------------------------
// Host-side argument capture from raw registers, schema-driven. The reader
// abstracts memory access: direct for the sim port, process_vm_readv for the
// tracer, so both adapters produce identical trees for identical calls.

class MemReader {
  public:
    virtual ~MemReader() = default;
    virtual bool read_mem(uint64_t addr, void* dst, size_t n) = 0;

    // NUL-terminated string, bounded.
    bool read_cstr(uint64_t addr, std::string& out, size_t cap = 4096) {
        out.clear();
        char chunk[64];
        while (out.size() < cap) {
            size_t want = std::min(sizeof chunk, cap - out.size());
            if (!read_mem(addr + out.size(), chunk, want)) return !out.empty();
            for (size_t i = 0; i < want; i++) {
                if (chunk[i] == '\0') return true;
                out.push_back(chunk[i]);
            }
        }
        return true;
    }
};

class DirectMemReader : public MemReader {
  public:
    bool read_mem(uint64_t addr, void* dst, size_t n) override {
        if (!addr) return false;
        memcpy(dst, reinterpret_cast<const void*>(addr), n);
        return true;
    }
};

inline ValueTree capture_host_args(int64_t nr, const std::array<int64_t, 6>& regs,
                                   MemReader& mem) {
    const SyscallSpec* spec = corpus().find(nr);
    std::vector<ValueTree::Field> fields;
    if (!spec) {
        for (size_t i = 0; i < 6; i++)
            fields.emplace_back("a" + std::to_string(i), ValueTree::of_int(regs[i]));
        return ValueTree::rec(std::move(fields));
    }
    for (size_t i = 0; i < spec->params.size() && i < 6; i++) {
        const ParamSchema& p = spec->params[i];
        int64_t raw = regs[i];
        switch (p.kind) {
        case ArgKind::Int:
        case ArgKind::Fd:
        case ArgKind::Len:
        case ArgKind::Offset:
        case ArgKind::Flags:
            fields.emplace_back(p.name, ValueTree::of_int(raw));
            break;
        case ArgKind::PathIn: {
            // Read one byte past the capture limit so the truncation flag
            // matches what of_string() computes from a full in-memory copy.
            std::string s;
            if (raw && mem.read_cstr(uint64_t(raw), s, kCaptureByteLimit + 1))
                fields.emplace_back(p.name, ValueTree::of_string(s));
            else
                fields.emplace_back(p.name, ValueTree::null());
            break;
        }
        case ArgKind::BytesIn: {
            // Inbound buffer length convention: next Len param bounds it.
            size_t n = 0;
            if (i + 1 < spec->params.size() && spec->params[i + 1].kind == ArgKind::Len)
                n = size_t(std::max<int64_t>(0, regs[i + 1]));
            std::vector<uint8_t> buf(std::min(n, kCaptureByteLimit));
            if (raw && n && mem.read_mem(uint64_t(raw), buf.data(), buf.size())) {
                ValueTree t = ValueTree::of_bytes(buf.data(), buf.size());
                t.set_truncated(n > buf.size());
                fields.emplace_back(p.name, std::move(t));
            } else {
                fields.emplace_back(p.name, ValueTree::null());
            }
            break;
        }
        case ArgKind::BufOut:
            // Output buffers are captured as null on both sides by design.
            fields.emplace_back(p.name, ValueTree::null());
            break;
        case ArgKind::PtrRec: {
            if (!raw) {
                fields.emplace_back(p.name, ValueTree::null());
                break;
            }
            int64_t v = 0;
            if (mem.read_mem(uint64_t(raw), &v, sizeof v))
                fields.emplace_back(
                    p.name, ValueTree::rec({{"value", ValueTree::of_int(v)}}));
            else
                fields.emplace_back(p.name, ValueTree::null());
            break;
        }
        }
    }
    return ValueTree::rec(std::move(fields));
}

} // namespace tbk
