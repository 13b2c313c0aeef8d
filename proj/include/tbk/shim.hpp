#pragma once
// Miniature TEE-container runtime: a syscall shim over internal arenas plus a
// relay to the host boundary. Internal calls never cross; translated and
// forwarded calls cross exactly once each, even for locally-invalid
// arguments (the crossing degenerates, the guest-visible error is applied
// after it) so the correlator's completeness invariant is structural.
//
// All twelve vulnerability toggles live here or in the devices this class
// owns; the hardened profile is the contract the oracle describes.

#include <cstring>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/epoll.h>
#include <sys/ipc.h>
#include <sys/mman.h>
#include <unistd.h>

#include "tbk/cases.hpp"
#include "tbk/clock_device.hpp"
#include "tbk/host_fs.hpp"
#include "tbk/oracle.hpp"
#include "tbk/profile.hpp"
#include "tbk/registry.hpp"

namespace tbk {

struct Mapping {
    int64_t len = 0;
    int64_t accounted = 0; // what the mapping table believes it reserved
    int64_t prot = PROT_READ;
    bool protected_ro = false; // measured segment: may never gain write
    int64_t fill = 0; // bytes the content fill reported
    std::vector<uint8_t> bytes;
};

struct ShmSegment {
    int64_t requested = 0;
    int64_t granted = 0;  // page-rounded reservation
    int64_t reported = 0; // what IPC_STAT answers
    int64_t attaches = 0;
};

class MiniTcon {
  public:
    MiniTcon(TconProfile profile, HostFs* fs, BoundaryPort* port, ClockDevice clockdev)
        : profile_(std::move(profile)), fs_(fs), port_(port), clockdev_(std::move(clockdev)),
          scratch_(size_t(profile_.limits.scratch_bytes)) {
        clockdev_.ensure_exists();
        anchor_real_ = int64_t(now_mono_ns());
        anchor_virt_ = clockdev_.read().virt_at(anchor_real_);
        last_virt_ = anchor_virt_;
    }

    const TconProfile& profile() const { return profile_; }
    const TconLimits& limits() const { return profile_.limits; }

    // -- fixtures / teardown (target-internal setup: no events, no crossings)

    int install_fd(const std::string& rel_path, int flags) {
        int fd = ::open(rel_path.c_str(), flags, 0644);
        if (fd < 0) throw Error("fixture open failed: " + rel_path);
        fds_[fd] = FdEntry{flags & O_ACCMODE, 0};
        return fd;
    }

    // Close the host fd but keep (or drop) table knowledge: a "closed" fd
    // fixture keeps the number out of the table while the host number stays
    // unused, so forwarding it draws an honest EBADF.
    void close_fd(int vfd) {
        ::close(vfd);
        fds_.erase(vfd);
    }

    void adopt_fd(int vfd, int mode) { fds_[vfd] = FdEntry{mode, 0}; }
    bool has_fd(int vfd) const { return fds_.count(vfd) != 0; }

    int64_t install_mapping(int64_t len, bool protected_ro) {
        int64_t off = next_map_;
        next_map_ += ((len + kPageSize - 1) / kPageSize + 1) * kPageSize;
        Mapping m;
        m.len = len;
        m.accounted = len;
        m.prot = protected_ro ? PROT_READ : (PROT_READ | PROT_WRITE);
        m.protected_ro = protected_ro;
        m.bytes.assign(size_t(len), 0);
        mappings_[off] = std::move(m);
        return off;
    }

    void drop_mapping(int64_t off) { mappings_.erase(off); }
    const Mapping* mapping(int64_t off) const {
        auto it = mappings_.find(off);
        return it == mappings_.end() ? nullptr : &it->second;
    }

    int64_t make_ready_fd(bool ready) {
        int64_t id = next_token_++;
        ready_fds_[id] = ready;
        return id;
    }
    void drop_ready_fd(int64_t id) { ready_fds_.erase(id); }

    int64_t epoll_create_i() {
        int64_t id = next_epoll_++;
        epolls_[id]; // default-construct
        return id;
    }
    void drop_epoll(int64_t id) { epolls_.erase(id); }

    void drop_shm(int64_t id) { shm_.erase(id); }

    Census census() const {
        Census c;
        c.fds = int64_t(fds_.size() + epolls_.size() + ready_fds_.size());
        c.mappings = int64_t(mappings_.size() + shm_.size());
        c.threads = 1;
        return c;
    }

    // -- guest syscall surface: returns value or -errno

    int64_t sys_getpid() { return kVirtPid; }

    // Scalars are forwarded verbatim even when locally invalid (the kernel
    // answers them honestly; the guest-visible error is applied after the
    // crossing). Oversized counts cannot overrun scratch: the kernel writes
    // at most the backing file's length, and every fixture file is far
    // smaller than the scratch buffer.
    int64_t sys_read(int64_t fd, int64_t count) {
        auto it = fds_.find(fd);
        int64_t off = it == fds_.end() ? 0 : it->second.offset;
        // Translation: read becomes pread64 at the tracked offset.
        HostCall hc{NR_pread64,
                    {fd, int64_t(reinterpret_cast<intptr_t>(scratch_.data())), count, off,
                     0, 0}};
        int64_t host_ret = port_->cross(hc);
        if (count < 0) return -EINVAL;
        int64_t ret = relay(NR_pread64, host_ret, count);
        if (ret > 0 && it != fds_.end()) it->second.offset += ret;
        return ret;
    }

    int64_t sys_pread64(int64_t fd, int64_t count, int64_t off) {
        HostCall hc{NR_pread64,
                    {fd, int64_t(reinterpret_cast<intptr_t>(scratch_.data())), count, off,
                     0, 0}};
        int64_t host_ret = port_->cross(hc);
        if (count < 0) return -EINVAL;
        return relay(NR_pread64, host_ret, count);
    }

    int64_t sys_open(const std::string& path, int64_t flags, int64_t mode) {
        std::string p = path; // stable storage for the crossing
        HostCall hc{NR_open,
                    {int64_t(reinterpret_cast<intptr_t>(p.c_str())), flags, mode, 0, 0, 0}};
        int64_t host_ret = port_->cross(hc);
        int64_t ret = relay(NR_open, host_ret, kFdMax);
        if (ret >= 0) fds_[ret] = FdEntry{int(flags & O_ACCMODE), 0};
        return ret;
    }

    int64_t sys_readlinkat(int64_t dirfd, const std::string& path, int64_t bufsiz) {
        std::string p = path;
        // bufsiz forwarded verbatim: the kernel treats it as signed and
        // answers non-positive sizes with EINVAL itself.
        HostCall hc{NR_readlinkat,
                    {dirfd, int64_t(reinterpret_cast<intptr_t>(p.c_str())),
                     int64_t(reinterpret_cast<intptr_t>(scratch_.data())), bufsiz, 0, 0}};
        int64_t host_ret = port_->cross(hc);
        if (profile_.on("improper_return_readlinkat") && bufsiz == 0 &&
            host_ret == -EINVAL)
            return 0; // relay clobbers the host's honest EINVAL
        return relay(NR_readlinkat, host_ret, std::max<int64_t>(bufsiz, 0));
    }

    int64_t sys_sendfile(int64_t out_fd, int64_t in_fd, bool off_present, int64_t off,
                         int64_t count) {
        int64_t hoff = off;
        HostCall hc{NR_sendfile,
                    {out_fd, in_fd,
                     off_present ? int64_t(reinterpret_cast<intptr_t>(&hoff)) : 0, count, 0,
                     0}};
        int64_t host_ret = port_->cross(hc);
        bool out_readonly = false;
        if (auto it = fds_.find(out_fd); it != fds_.end())
            out_readonly = it->second.mode == O_RDONLY;
        if (profile_.on("improper_return_sendfile") && out_readonly && host_ret == -EBADF)
            return 0; // relay clobbers the host's honest EBADF
        return relay(NR_sendfile, host_ret, std::max<int64_t>(count, 0));
    }

    // mmap is translated to a content fill: allocate an internal arena
    // mapping and pread the backing range through the boundary. Returns the
    // mapping offset handle.
    int64_t sys_mmap(int64_t len, int64_t prot, int64_t fd, int64_t off) {
        bool valid = len > 0 && len <= kMmapMax && off >= 0 && off % kPageSize == 0;
        int64_t want = valid ? len : 0;
        // Recycled-page model: fresh arena pages carry stale 0xA5 junk until
        // the runtime scrubs them.
        std::vector<uint8_t> bytes(size_t(std::max<int64_t>(want, 0)), 0xA5);
        int64_t host_count = std::min<int64_t>(want, int64_t(scratch_.size()));
        HostCall hc{NR_pread64,
                    {fd,
                     int64_t(reinterpret_cast<intptr_t>(bytes.empty() ? scratch_.data()
                                                                      : bytes.data())),
                     host_count, valid ? off : 0, 0, 0}};
        int64_t host_ret = port_->cross(hc);
        if (len <= 0) return -EINVAL;
        if (len > kMmapMax) return -ENOMEM;
        if (off < 0 || off % kPageSize) return -EINVAL;
        int64_t fill = relay(NR_pread64, host_ret, host_count);
        if (fill < 0) return fill; // e.g. EBADF from a dead fd
        fill = std::min(fill, len);
        if (!profile_.on("zero_fill_bug"))
            memset(bytes.data() + fill, 0, size_t(len - fill));
        int64_t moff = next_map_;
        next_map_ += ((len + kPageSize - 1) / kPageSize + 1) * kPageSize;
        Mapping m;
        m.len = len;
        m.accounted = len;
        m.prot = prot;
        m.protected_ro = false;
        m.bytes = std::move(bytes);
        m.fill = fill;
        mappings_[moff] = std::move(m);
        return moff;
    }

    int64_t sys_mprotect(int64_t addr, int64_t len, int64_t prot) {
        auto it = mappings_.find(addr);
        if (it == mappings_.end()) return -ENOMEM;
        (void)len;
        if (it->second.protected_ro && (prot & PROT_WRITE)) {
            if (!profile_.on("mprotect_bug")) return -EACCES;
            // measured read-only segment silently gains write
        }
        it->second.prot = prot;
        return 0;
    }

    int64_t sys_mremap(int64_t addr, int64_t old_len, int64_t new_len) {
        auto it = mappings_.find(addr);
        if (it == mappings_.end()) return -EFAULT;
        if (new_len <= 0) return -EINVAL;
        (void)old_len;
        Mapping& m = it->second;
        bool grow = new_len > m.len;
        m.bytes.resize(size_t(new_len), 0);
        m.len = new_len;
        if (!(profile_.on("mremap_bug") && grow))
            m.accounted = new_len; // buggy grow keeps the stale small account
        return addr;
    }

    int64_t sys_shmget(int64_t key, int64_t size, int64_t flag) {
        (void)key;
        (void)flag;
        if (size <= 0) return -EINVAL;
        if (size > kShmMax) return -EINVAL;
        int64_t id = next_shm_++;
        ShmSegment s;
        s.requested = size;
        s.granted = ((size + kPageSize - 1) / kPageSize) * kPageSize;
        // Contract: stat reports the requested size. The buggy runtime leaks
        // its internal page-rounded figure instead.
        s.reported = profile_.on("shm_size_bug") ? s.granted : size;
        shm_[id] = s;
        return id;
    }

    int64_t sys_shmat(int64_t id, int64_t addr, int64_t flag) {
        (void)flag;
        auto it = shm_.find(id);
        if (it == shm_.end()) return -EINVAL;
        if (addr != 0) return -EINVAL; // only kernel-chosen placement modeled
        it->second.attaches++;
        return 0x40000000 + id * 0x10000;
    }

    int64_t sys_shmctl(int64_t id, int64_t cmd, int64_t* size_out) {
        auto it = shm_.find(id);
        if (it == shm_.end()) return -EINVAL;
        if (cmd == 2 /* IPC_STAT */) {
            if (size_out) *size_out = it->second.reported;
            return 0;
        }
        if (cmd == 0 /* IPC_RMID */) {
            shm_.erase(it);
            return 0;
        }
        return -EINVAL;
    }

    const ShmSegment* shm_seg(int64_t id) const {
        auto it = shm_.find(id);
        return it == shm_.end() ? nullptr : &it->second;
    }

    int64_t sys_epoll_ctl(int64_t epfd, int64_t op, int64_t fd) {
        auto ep = epolls_.find(epfd);
        if (ep == epolls_.end()) return -EBADF;
        bool fd_is_epoll = epolls_.count(fd) != 0;
        if (!fd_is_epoll && !ready_fds_.count(fd)) return -EBADF;
        if (op == EPOLL_CTL_DEL) {
            if (!ep->second.members.erase(fd)) return -ENOENT;
            return 0;
        }
        if (op == EPOLL_CTL_MOD) {
            return ep->second.members.count(fd) ? 0 : -ENOENT;
        }
        if (op != EPOLL_CTL_ADD) return -EINVAL;
        if (fd == epfd) return -EINVAL;
        if (fd_is_epoll) {
            if (!profile_.on("epoll_cycle_bug") && reaches(fd, epfd))
                return -ELOOP;
            if (!profile_.on("epoll_depth_bug")) {
                ep->second.members.insert(fd);
                int64_t depth = max_depth();
                ep->second.members.erase(fd);
                if (depth > profile_.limits.epoll_nesting_limit) return -ELOOP;
            }
        }
        ep->second.members.insert(fd);
        return 0;
    }

    int64_t epoll_depth(int64_t epfd) const {
        std::set<int64_t> seen;
        return depth_of(epfd, seen);
    }

    int64_t max_depth() const {
        int64_t d = 0;
        for (const auto& [id, e] : epolls_) d = std::max(d, epoll_depth(id));
        return d;
    }

    // Readiness is decided statically: a watcher set that can never become
    // ready (mutual listeners, no ready leaves) is a deadlock; the watchdog
    // bound is reported without sleeping real time.
    EpollWaitResult epoll_wait_sim(int64_t epfd) {
        std::set<int64_t> seen;
        if (is_ready(epfd, seen)) return EpollWaitResult::Events;
        std::set<int64_t> seen2;
        return has_cycle(epfd, seen2) ? EpollWaitResult::WatchdogDeadlock
                                      : EpollWaitResult::Timeout;
    }

    int64_t sys_clock_getres(int64_t clk, int64_t* res_ns) {
        if (clk < 0 || clk >= 16) return -EINVAL;
        int64_t res = profile_.limits.documented_clock_res_ns;
        if (profile_.on("clockres_bug")) res = clockdev_.read().res_advertised_ns;
        if (res_ns) *res_ns = res;
        return 0;
    }

    // Virtual time from the host-published transform. The hardened runtime
    // cross-checks against its own steady anchor and clamps monotonic.
    int64_t clock_now_virt() {
        int64_t real = int64_t(now_mono_ns());
        int64_t device = clockdev_.read().virt_at(real);
        if (profile_.on("clockres_bug")) return device; // trusts host verbatim
        int64_t expected = anchor_virt_ + (real - anchor_real_);
        int64_t v = device;
        if (v < expected - 1'000'000 || v > expected + 1'000'000) v = expected;
        if (v < last_virt_) v = last_virt_;
        last_virt_ = v;
        return v;
    }

    int64_t clock_expected_virt() const {
        return anchor_virt_ + (int64_t(now_mono_ns()) - anchor_real_);
    }

    const ClockDevice& clockdev() const { return clockdev_; }

    // -- protected-store freshness state (enclave RAM across probes)

    int64_t pf_expected_counter = 0;
    int64_t pf_last_marker = -1;

    // -- model heap for the allocate-until-refused probe

    int64_t heap_alloc(int64_t n) {
        if (n < 0) return -EINVAL;
        if (heap_used_ + n > profile_.limits.heap_limit) return -ENOMEM;
        heap_used_ += n;
        return 0;
    }
    void heap_release_all() { heap_used_ = 0; }
    int64_t heap_used() const { return heap_used_; }

  private:
    struct FdEntry {
        int mode = O_RDONLY;
        int64_t offset = 0;
    };

    struct Ep {
        std::set<int64_t> members;
    };

    // Host-return sanitizing: the hardened relay refuses values the contract
    // cannot produce (overlong counts, foreign errnos). The Iago-vulnerable
    // relay consumes whatever the host said.
    int64_t relay(int64_t host_nr, int64_t host_ret, int64_t max_plausible) {
        if (profile_.on("iago_bug")) return host_ret;
        if (host_ret < 0) {
            int64_t eno = -host_ret;
            if (eno > 4095 || !errno_legal_for(host_nr, eno)) return -EIO;
            return host_ret;
        }
        if (host_ret > max_plausible) return -EIO;
        return host_ret;
    }

    bool reaches(int64_t from, int64_t to) const {
        if (from == to) return true;
        auto it = epolls_.find(from);
        if (it == epolls_.end()) return false;
        for (int64_t m : it->second.members)
            if (epolls_.count(m) && reaches(m, to)) return true;
        return false;
    }

    int64_t depth_of(int64_t epfd, std::set<int64_t>& seen) const {
        auto it = epolls_.find(epfd);
        if (it == epolls_.end()) return 0;
        if (!seen.insert(epfd).second) return 0; // cycle: bounded by seen set
        int64_t d = 1;
        for (int64_t m : it->second.members)
            if (epolls_.count(m)) d = std::max(d, 1 + depth_of(m, seen));
        seen.erase(epfd);
        return d;
    }

    bool is_ready(int64_t fd, std::set<int64_t>& seen) const {
        auto ep = epolls_.find(fd);
        if (ep == epolls_.end()) {
            auto r = ready_fds_.find(fd);
            return r != ready_fds_.end() && r->second;
        }
        if (!seen.insert(fd).second) return false;
        for (int64_t m : ep->second.members)
            if (is_ready(m, seen)) return true;
        return false;
    }

    bool has_cycle(int64_t fd, std::set<int64_t>& path) const {
        auto ep = epolls_.find(fd);
        if (ep == epolls_.end()) return false;
        if (!path.insert(fd).second) return true;
        for (int64_t m : ep->second.members)
            if (has_cycle(m, path)) return true;
        path.erase(fd);
        return false;
    }

    TconProfile profile_;
    HostFs* fs_;
    BoundaryPort* port_;
    ClockDevice clockdev_;
    std::vector<uint8_t> scratch_;

    std::map<int64_t, FdEntry> fds_;
    std::map<int64_t, Mapping> mappings_;
    std::map<int64_t, ShmSegment> shm_;
    std::map<int64_t, Ep> epolls_;
    std::map<int64_t, bool> ready_fds_;

    int64_t next_map_ = 0x10000;
    int64_t next_shm_ = 1;
    int64_t next_epoll_ = 0x60000000;
    int64_t next_token_ = 0x70000000;
    int64_t heap_used_ = 0;

    int64_t anchor_real_ = 0;
    int64_t anchor_virt_ = 0;
    int64_t last_virt_ = 0;
};

} // namespace tbk
