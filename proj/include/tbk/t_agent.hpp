#pragma once
// Target-side agent: executes generated cases against the container runtime,
// records exactly one T event per cycle (seq == cycle_id, which is what the
// correlator and the host-side mirror join on), then a post_state record
// after teardown so resource accounting is checkable offline.
//
// Subsystem probes (protected store, virtqueue, clock) never cross the
// boundary port; their evidence travels entirely in post_state observations.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/epoll.h>
#include <time.h>

#include "tbk/generator.hpp"
#include "tbk/json_io.hpp"
#include "tbk/mutation.hpp"
#include "tbk/protected_store.hpp"
#include "tbk/shim.hpp"
#include "tbk/sync.hpp"
#include "tbk/virtqueue.hpp"

namespace tbk {

inline constexpr int64_t kAtFdcwd = -100;

inline void sleep_us_agent(int64_t us) {
    timespec ts{time_t(us / 1'000'000), long(us % 1'000'000) * 1000};
    nanosleep(&ts, nullptr);
}

// What one cycle leaves behind between the EXEC and TEARDOWN protocol steps.
struct CycleRun {
    BoundaryEvent event;
    PostState post;
    std::function<void()> teardown;
};

class CaseExecutor {
  public:
    CaseExecutor(MiniTcon& tcon, HostFs& fs, std::string backing_path,
                 std::string group_id)
        : tcon_(tcon), fs_(fs), backing_path_(std::move(backing_path)),
          group_id_(std::move(group_id)) {}

    CycleRun run_case(const TestCase& tc) {
        CycleRun r;
        r.post.cycle_id = tc.cycle_id;
        r.teardown = [] {};
        switch (tc.kind) {
        case CaseKind::Syscall: exec_syscall(tc, r); break;
        case CaseKind::PfProbe: exec_pf(tc, r); break;
        case CaseKind::VirtqProbe: exec_virtq(tc, r); break;
        case CaseKind::ClockProbe: exec_clock(tc, r); break;
        case CaseKind::AllocProbe: exec_alloc(tc, r); break;
        }
        return r;
    }

  private:
    BoundaryEvent base_event(const TestCase& tc) {
        BoundaryEvent e;
        e.side = Side::T;
        e.cycle_id = tc.cycle_id;
        e.seq = tc.cycle_id;
        e.group_id = group_id_;
        e.syscall = tc.nr;
        e.mono_ts = now_mono_ns();
        return e;
    }

    static ValueTree args_rec(std::vector<ValueTree::Field> f) {
        return ValueTree::rec(std::move(f));
    }

    void exec_syscall(const TestCase& tc, CycleRun& r) {
        switch (tc.nr) {
        case NR_read:
        case NR_pread64: exec_read(tc, r); break;
        case NR_open: exec_open(tc, r); break;
        case NR_readlinkat: exec_readlinkat(tc, r); break;
        case NR_sendfile: exec_sendfile(tc, r); break;
        case NR_mmap: exec_mmap(tc, r); break;
        case NR_mprotect: exec_mprotect(tc, r); break;
        case NR_mremap: exec_mremap(tc, r); break;
        case NR_shmget: exec_shmget(tc, r); break;
        case NR_shmat: exec_shmat(tc, r); break;
        case NR_shmctl: exec_shmctl(tc, r); break;
        case NR_epoll_ctl: exec_epoll(tc, r); break;
        case NR_clock_getres: exec_getres(tc, r); break;
        case NR_getpid: {
            r.event = base_event(tc);
            r.event.args = args_rec({});
            r.event.ret = tcon_.sys_getpid();
            break;
        }
        default: throw Error("executor: unhandled syscall " + std::to_string(tc.nr));
        }
    }

    // fd fixture shared by read-family cases; returns the virtual fd number.
    int make_fd(const std::string& file, int64_t state) {
        if (state == kFdWrongMode) return tcon_.install_fd(file, O_WRONLY);
        int fd = tcon_.install_fd(file, O_RDONLY);
        if (state == kFdClosed) tcon_.close_fd(fd);
        return fd;
    }

    void exec_read(const TestCase& tc, CycleRun& r) {
        std::string file = "c" + std::to_string(tc.cycle_id) + "_f";
        int64_t file_len = tc.geti("file_len");
        fs_.write_file(file, fixture_bytes(file_len, tc.cycle_id));
        int64_t state = tc.geti("fd_state");
        int fd = make_fd(file, state);
        int64_t count = tc.geti("count");
        r.event = base_event(tc);
        if (tc.nr == NR_read) {
            r.event.args = args_rec({{"fd", ValueTree::of_int(fd)},
                                     {"buf", ValueTree::null()},
                                     {"count", ValueTree::of_int(count)}});
            r.event.ret = tcon_.sys_read(fd, count);
        } else {
            int64_t off = tc.geti("off");
            r.event.args = args_rec({{"fd", ValueTree::of_int(fd)},
                                     {"buf", ValueTree::null()},
                                     {"count", ValueTree::of_int(count)},
                                     {"off", ValueTree::of_int(off)}});
            r.event.ret = tcon_.sys_pread64(fd, count, off);
        }
        r.teardown = [this, fd, state, file] {
            if (state != kFdClosed) tcon_.close_fd(fd);
            fs_.unlink(file);
        };
    }

    void exec_open(const TestCase& tc, CycleRun& r) {
        std::string path = tc.gets("path");
        bool exists = tc.geti("exists") != 0;
        if (exists) fs_.write_file(path, fixture_bytes(tc.geti("file_len", 100), tc.cycle_id));
        int64_t flags = tc.geti("flags"), mode = tc.geti("mode", 0644);
        r.event = base_event(tc);
        r.event.args = args_rec({{"path", ValueTree::of_string(path)},
                                 {"flags", ValueTree::of_int(flags)},
                                 {"mode", ValueTree::of_int(mode)}});
        int64_t ret = tcon_.sys_open(path, flags, mode);
        r.event.ret = ret;
        bool created = tc.geti("o_creat") != 0 && ret >= 0;
        r.teardown = [this, ret, exists, created, path] {
            if (ret >= 0) tcon_.close_fd(int(ret));
            if (exists || created) fs_.unlink(path);
        };
    }

    void exec_readlinkat(const TestCase& tc, CycleRun& r) {
        std::string target = tc.gets("link_target");
        fs_.write_file(target, fixture_bytes(16, 0)); // shared anchor, idempotent
        std::string link = "c" + std::to_string(tc.cycle_id) + "_ln";
        bool exists = tc.geti("exists") != 0;
        if (exists) {
            if (tc.geti("is_symlink"))
                fs_.symlink_to(target, link);
            else
                fs_.write_file(link, fixture_bytes(4, 0));
        }
        int64_t bufsiz = tc.geti("bufsiz");
        r.event = base_event(tc);
        r.event.args = args_rec({{"dirfd", ValueTree::of_int(kAtFdcwd)},
                                 {"path", ValueTree::of_string(link)},
                                 {"buf", ValueTree::null()},
                                 {"bufsiz", ValueTree::of_int(bufsiz)}});
        r.event.ret = tcon_.sys_readlinkat(kAtFdcwd, link, bufsiz);
        r.teardown = [this, link] { fs_.unlink(link); };
    }

    void exec_sendfile(const TestCase& tc, CycleRun& r) {
        std::string in = "c" + std::to_string(tc.cycle_id) + "_in";
        std::string out = "c" + std::to_string(tc.cycle_id) + "_out";
        fs_.write_file(in, fixture_bytes(tc.geti("file_len"), tc.cycle_id));
        fs_.write_file(out, {});
        int64_t in_state = tc.geti("in_state"), out_state = tc.geti("out_state");
        // Install both descriptors before closing either: closing first would
        // let the host recycle the freed number for out_fd, silently aliasing
        // the "closed" descriptor to a live one.
        int in_fd = tcon_.install_fd(in, O_RDONLY);
        int out_fd = tcon_.install_fd(out, out_state == kFdWrongMode ? O_RDONLY : O_RDWR);
        if (in_state == kFdClosed) tcon_.close_fd(in_fd);
        bool off_present = tc.geti("off_present") != 0;
        int64_t off = tc.geti("off", 0), count = tc.geti("count");
        r.event = base_event(tc);
        r.event.args = args_rec(
            {{"out_fd", ValueTree::of_int(out_fd)},
             {"in_fd", ValueTree::of_int(in_fd)},
             {"off", off_present ? ValueTree::rec({{"value", ValueTree::of_int(off)}})
                                 : ValueTree::null()},
             {"count", ValueTree::of_int(count)}});
        r.event.ret = tcon_.sys_sendfile(out_fd, in_fd, off_present, off, count);
        r.teardown = [this, in_fd, out_fd, in_state, in, out] {
            if (in_state != kFdClosed) tcon_.close_fd(in_fd);
            tcon_.close_fd(out_fd);
            fs_.unlink(in);
            fs_.unlink(out);
        };
    }

    void exec_mmap(const TestCase& tc, CycleRun& r) {
        std::string file = "c" + std::to_string(tc.cycle_id) + "_f";
        int64_t file_len = tc.geti("file_len");
        fs_.write_file(file, fixture_bytes(file_len, tc.cycle_id));
        int64_t state = tc.geti("fd_state");
        int fd = make_fd(file, state);
        int64_t len = tc.geti("len"), off = tc.geti("off");
        int64_t prot = PROT_READ | PROT_WRITE, flags = MAP_PRIVATE;
        r.event = base_event(tc);
        r.event.args = args_rec({{"addr", ValueTree::of_int(0)},
                                 {"len", ValueTree::of_int(len)},
                                 {"prot", ValueTree::of_int(prot)},
                                 {"flags", ValueTree::of_int(flags)},
                                 {"fd", ValueTree::of_int(fd)},
                                 {"off", ValueTree::of_int(off)}});
        int64_t ret = tcon_.sys_mmap(len, prot, fd, off);
        r.event.ret = ret;
        if (ret >= 0) {
            const Mapping* m = tcon_.mapping(ret);
            MapObs obs;
            obs.requested_len = len;
            obs.file_len = file_len;
            obs.fill_count = m->fill;
            int64_t backed = std::clamp<int64_t>(file_len - off, 0, len);
            for (int64_t i = backed; i < std::min<int64_t>(backed + 64, len); i++)
                obs.tail_sample.push_back(m->bytes[size_t(i)]);
            r.post.map = obs;
        }
        r.teardown = [this, ret, fd, state, file] {
            if (ret >= 0) tcon_.drop_mapping(ret);
            if (state != kFdClosed) tcon_.close_fd(fd);
            fs_.unlink(file);
        };
    }

    void exec_mprotect(const TestCase& tc, CycleRun& r) {
        int64_t target = tc.geti("target");
        int64_t addr = 0x7D0DEAD000; // never a mapping handle
        int64_t moff = -1;
        if (target != 2) {
            moff = tcon_.install_mapping(4096, target == 0);
            addr = moff;
        }
        int64_t prot = PROT_READ | (tc.geti("add_write") ? PROT_WRITE : 0);
        int64_t len = tc.geti("len");
        r.event = base_event(tc);
        r.event.args = args_rec({{"addr", ValueTree::of_int(addr)},
                                 {"len", ValueTree::of_int(len)},
                                 {"prot", ValueTree::of_int(prot)}});
        r.event.ret = tcon_.sys_mprotect(addr, len, prot);
        r.teardown = [this, moff] {
            if (moff >= 0) tcon_.drop_mapping(moff);
        };
    }

    void exec_mremap(const TestCase& tc, CycleRun& r) {
        int64_t addr = 0x7D0DEAD000;
        int64_t moff = -1;
        if (tc.geti("target") == 0) {
            moff = tcon_.install_mapping(4096, false);
            addr = moff;
        }
        int64_t old_len = tc.geti("old_len"), new_len = tc.geti("new_len");
        r.event = base_event(tc);
        r.event.args = args_rec({{"addr", ValueTree::of_int(addr)},
                                 {"old_len", ValueTree::of_int(old_len)},
                                 {"new_len", ValueTree::of_int(new_len)},
                                 {"flags", ValueTree::of_int(0)}});
        int64_t ret = tcon_.sys_mremap(addr, old_len, new_len);
        r.event.ret = ret;
        if (ret >= 0) {
            RemapObs obs;
            obs.old_size = old_len;
            obs.requested_new = new_len;
            obs.accounted = tcon_.mapping(moff)->accounted;
            r.post.remap = obs;
        }
        r.teardown = [this, moff] {
            if (moff >= 0) tcon_.drop_mapping(moff);
        };
    }

    void exec_shmget(const TestCase& tc, CycleRun& r) {
        int64_t size = tc.geti("size");
        r.event = base_event(tc);
        r.event.args = args_rec({{"key", ValueTree::of_int(0x1234)},
                                 {"size", ValueTree::of_int(size)},
                                 {"flag", ValueTree::of_int(0)}});
        int64_t ret = tcon_.sys_shmget(0x1234, size, 0);
        r.event.ret = ret;
        if (ret >= 0) {
            const ShmSegment* seg = tcon_.shm_seg(ret);
            r.post.shm = ShmObs{seg->requested, seg->granted, seg->reported};
        }
        r.teardown = [this, ret] {
            if (ret >= 0) tcon_.drop_shm(ret);
        };
    }

    void exec_shmat(const TestCase& tc, CycleRun& r) {
        int64_t id = 424242, created = -1;
        if (tc.geti("id_state") == 0) {
            created = tcon_.sys_shmget(0x55, tc.geti("size"), 0);
            id = created;
        }
        int64_t addr = tc.geti("addr");
        r.event = base_event(tc);
        r.event.args = args_rec({{"id", ValueTree::of_int(id)},
                                 {"addr", ValueTree::of_int(addr)},
                                 {"flag", ValueTree::of_int(0)}});
        r.event.ret = tcon_.sys_shmat(id, addr, 0);
        r.teardown = [this, created] {
            if (created >= 0) tcon_.drop_shm(created);
        };
    }

    void exec_shmctl(const TestCase& tc, CycleRun& r) {
        int64_t id = 424242, created = -1, granted = 0;
        if (tc.geti("id_state") == 0) {
            created = tcon_.sys_shmget(0x66, tc.geti("size"), 0);
            id = created;
            granted = tcon_.shm_seg(id)->granted;
        }
        int64_t cmd = tc.geti("cmd");
        int64_t size_out = 0;
        r.event = base_event(tc);
        r.event.args = args_rec({{"id", ValueTree::of_int(id)},
                                 {"cmd", ValueTree::of_int(cmd)},
                                 {"buf", ValueTree::null()}});
        int64_t ret = tcon_.sys_shmctl(id, cmd, &size_out);
        r.event.ret = ret;
        if (ret == 0 && cmd == 2 /* IPC_STAT */)
            r.post.shm = ShmObs{tc.geti("size"), granted, size_out};
        bool removed = (cmd == 0 /* IPC_RMID */ && ret == 0);
        r.teardown = [this, created, removed] {
            if (created >= 0 && !removed) tcon_.drop_shm(created);
        };
    }

    void exec_epoll(const TestCase& tc, CycleRun& r) {
        const TconLimits& lim = tcon_.limits();
        std::vector<int64_t> eps, tokens;
        int64_t main_epfd = 0, main_op = EPOLL_CTL_ADD, main_fd = 0, ret = 0;
        std::optional<EpollWaitResult> wait;
        bool cycle_accepted = false;
        int64_t requested_depth = 0;
        switch (tc.variant) {
        case 0: { // mutual listeners
            int64_t a = tcon_.epoll_create_i(), b = tcon_.epoll_create_i();
            eps = {a, b};
            tcon_.sys_epoll_ctl(a, EPOLL_CTL_ADD, b); // legal first edge
            main_epfd = b;
            main_fd = a;
            ret = tcon_.sys_epoll_ctl(b, EPOLL_CTL_ADD, a);
            cycle_accepted = ret == 0;
            if (ret == 0) wait = tcon_.epoll_wait_sim(a);
            break;
        }
        case 1: { // plain add of a ready source, wait sees events
            int64_t e = tcon_.epoll_create_i();
            int64_t f = tcon_.make_ready_fd(true);
            eps = {e};
            tokens = {f};
            main_epfd = e;
            main_fd = f;
            ret = tcon_.sys_epoll_ctl(e, EPOLL_CTL_ADD, f);
            if (ret == 0) wait = tcon_.epoll_wait_sim(e);
            break;
        }
        case 2: { // nesting chain past the documented limit
            requested_depth = tc.geti("depth");
            for (int64_t i = 0; i < requested_depth; i++) eps.push_back(tcon_.epoll_create_i());
            int64_t i_main = std::clamp<int64_t>(lim.epoll_nesting_limit - 1, 0,
                                                 requested_depth - 2);
            for (int64_t i = 0; i + 1 < requested_depth; i++) {
                int64_t rr = tcon_.sys_epoll_ctl(eps[size_t(i)], EPOLL_CTL_ADD,
                                                 eps[size_t(i + 1)]);
                if (i == i_main) {
                    ret = rr;
                    main_epfd = eps[size_t(i)];
                    main_fd = eps[size_t(i + 1)];
                }
            }
            break;
        }
        case 3: { // epfd that was never an epoll
            int64_t f = tcon_.make_ready_fd(true);
            tokens = {f};
            main_epfd = 0x999;
            main_fd = f;
            ret = tcon_.sys_epoll_ctl(main_epfd, EPOLL_CTL_ADD, f);
            break;
        }
        case 4: { // target fd unknown to the runtime
            int64_t e = tcon_.epoll_create_i();
            eps = {e};
            main_epfd = e;
            main_fd = 12345;
            ret = tcon_.sys_epoll_ctl(e, EPOLL_CTL_ADD, main_fd);
            break;
        }
        case 5: { // delete a never-added member
            int64_t e = tcon_.epoll_create_i();
            int64_t f = tcon_.make_ready_fd(false);
            eps = {e};
            tokens = {f};
            main_epfd = e;
            main_op = EPOLL_CTL_DEL;
            main_fd = f;
            ret = tcon_.sys_epoll_ctl(e, EPOLL_CTL_DEL, f);
            break;
        }
        default: { // self-add
            int64_t e = tcon_.epoll_create_i();
            eps = {e};
            main_epfd = e;
            main_fd = e;
            ret = tcon_.sys_epoll_ctl(e, EPOLL_CTL_ADD, e);
            break;
        }
        }
        r.event = base_event(tc);
        r.event.args = args_rec({{"epfd", ValueTree::of_int(main_epfd)},
                                 {"op", ValueTree::of_int(main_op)},
                                 {"fd", ValueTree::of_int(main_fd)},
                                 {"event", ValueTree::null()}});
        r.event.ret = ret;
        EpollObs obs;
        obs.requested_depth = requested_depth;
        obs.accepted_depth = tcon_.max_depth();
        obs.limit = lim.epoll_nesting_limit;
        obs.cycle_accepted = cycle_accepted;
        obs.wait_result = wait;
        obs.watchdog_ms = lim.watchdog_ms;
        r.post.epoll = obs;
        r.teardown = [this, eps, tokens] {
            for (int64_t e : eps) tcon_.drop_epoll(e);
            for (int64_t t : tokens) tcon_.drop_ready_fd(t);
        };
    }

    void exec_getres(const TestCase& tc, CycleRun& r) {
        int64_t clk = tc.geti("clk"), res = 0;
        r.event = base_event(tc);
        r.event.args = args_rec({{"clk", ValueTree::of_int(clk)},
                                 {"res", ValueTree::null()}});
        int64_t ret = tcon_.sys_clock_getres(clk, &res);
        r.event.ret = ret;
        if (ret == 0) {
            ClockObs obs;
            obs.res_ns = res;
            obs.documented_res_ns = tcon_.limits().documented_clock_res_ns;
            r.post.clock = obs;
        }
    }

    void exec_pf(const TestCase& tc, CycleRun& r) {
        r.event = base_event(tc);
        r.event.args = args_rec({{"variant", ValueTree::of_int(tc.variant)},
                                 {"blocks", ValueTree::of_int(tc.geti("blocks"))}});
        r.event.ret = 0;
        ProtectedStore st(backing_path_, store_test_key(),
                          tcon_.limits().cache_blocks,
                          !tcon_.profile().on("pf_rollback_bug"));
        PfObs obs;
        auto opened = st.open(tcon_.pf_expected_counter, 16);
        if (opened == ProtectedStore::OpenResult::RejectedFreshness) {
            obs.outcome = PfOutcome::RejectedFreshness;
        } else if (opened == ProtectedStore::OpenResult::RejectedIntegrity) {
            obs.outcome = PfOutcome::RejectedIntegrity;
        } else if (tc.variant == 0) { // write batch: one past cache capacity
            int64_t blocks = tc.geti("blocks");
            uint8_t blk[ProtectedStore::kBlockSize];
            for (int64_t i = 0; i < blocks; i++) {
                memset(blk, 0, sizeof blk);
                int64_t marker = tc.cycle_id;
                memcpy(blk, &marker, 8);
                for (size_t b = 8; b < sizeof blk; b++)
                    blk[b] = uint8_t(int64_t(b) * 13 + tc.cycle_id * 7 + i);
                st.write_block(i, blk);
            }
            st.flush_all();
            obs.outcome = PfOutcome::Fresh;
            obs.blocks_written = blocks;
            tcon_.pf_expected_counter = st.counter();
            tcon_.pf_last_marker = tc.cycle_id;
        } else { // read-verify: detect a swapped-in stale image
            uint8_t blk[ProtectedStore::kBlockSize];
            auto rr = st.read_block(0, blk);
            if (rr != ProtectedStore::ReadResult::Ok) {
                obs.outcome = PfOutcome::RejectedIntegrity;
            } else {
                int64_t marker = 0;
                memcpy(&marker, blk, 8);
                obs.outcome = (tcon_.pf_last_marker >= 0 && marker != tcon_.pf_last_marker)
                                  ? PfOutcome::StaleServed
                                  : PfOutcome::Fresh;
            }
        }
        obs.flushes = st.eviction_flushes();
        st.close_store();
        r.post.pf = obs;
    }

    void exec_virtq(const TestCase& tc, CycleRun& r) {
        r.event = base_event(tc);
        r.event.args = args_rec({{"variant", ValueTree::of_int(tc.variant)},
                                 {"ring", ValueTree::of_int(tc.geti("ring"))},
                                 {"arena", ValueTree::of_int(tc.geti("arena"))}});
        r.event.ret = 0;
        uint16_t ring = uint16_t(tc.geti("ring"));
        uint64_t arena = uint64_t(tc.geti("arena"));
        bool validate = !tcon_.profile().on("virtq_oob_bug");
        VirtqObs obs;
        if (tc.variant == 4) { // device-supplied RSS hash key length
            uint32_t key_len = kRssMaxKeyLen + 24;
            obs.used_len = key_len;
            obs.posted_len = kRssMaxKeyLen;
            if (validate && !validate_hash_key_len(key_len)) {
                obs.accepted = false;
                obs.detail = "hash key length rejected";
            } else {
                obs.accepted = !validate_hash_key_len(key_len);
                obs.detail = "hash key length consumed";
            }
        } else if (tc.variant == 5) { // DMA page with device-corrupted payload
            std::vector<uint8_t> payload(64);
            for (size_t i = 0; i < payload.size(); i++)
                payload[i] = uint8_t(i + tc.cycle_id);
            DmaPage page = dma_make(payload);
            page.payload[size_t(tc.case_seed % payload.size())] ^= 0xFF; // device tampering
            obs.used_len = int64_t(page.len);
            obs.posted_len = int64_t(payload.size());
            bool verify = !tcon_.profile().on("iago_bug");
            if (verify && !dma_verify(page)) {
                obs.accepted = false;
                obs.detail = "dma checksum mismatch";
            } else {
                obs.accepted = !dma_verify(page);
                obs.detail = "dma page consumed";
            }
        } else {
            VirtQueueSim q(ring, arena);
            uint16_t head = 0;
            VqUsed used;
            switch (tc.variant) {
            case 0: // honest device reply
                head = q.post_chain({{0, 64}, {64, 64}});
                used = {head, 100};
                obs.posted_len = 128;
                break;
            case 1: // used.len beyond posted capacity
                head = q.post_chain({{0, 64}, {64, 64}});
                used = {head, 128 + 16};
                obs.posted_len = 128;
                break;
            case 2: // descriptor range escapes the arena
                head = q.post_chain({{arena - 8, 64}});
                used = {head, 32};
                obs.posted_len = 64;
                break;
            default: { // chain cycle via device-rewritten next pointer
                head = q.post_chain({{0, 64}, {64, 64}});
                uint16_t second = uint16_t((head + 1) % ring);
                q.view().table[second].flags |= kVqDescFNext;
                q.view().table[second].next = head;
                used = {head, 10};
                obs.posted_len = 128;
                break;
            }
            }
            auto c = q.consume(used, validate);
            obs.accepted = c.accepted_invalid;
            obs.used_len = int64_t(used.len);
            obs.detail = c.detail.empty() ? "consumed" : c.detail;
        }
        r.post.virtq = obs;
    }

    void exec_clock(const TestCase& tc, CycleRun& r) {
        r.event = base_event(tc);
        r.event.args = args_rec({{"variant", ValueTree::of_int(tc.variant)},
                                 {"samples", ValueTree::of_int(tc.geti("samples"))}});
        r.event.ret = 0;
        ClockObs obs;
        int64_t n = tc.geti("samples");
        // Each virtual sample is bracketed by trusted reads and retried until
        // the bracket is tight; the trusted window then spans exactly the
        // sampled instants. An unpaired sample would charge any stall inside
        // the read (device-file I/O, preemption) to one side of the
        // virt/trusted ratio and could push a compliant runtime across the
        // detection threshold on a loaded machine.
        auto sample = [this](int64_t& virt, int64_t& real) {
            for (int tries = 0;; tries++) {
                int64_t before = int64_t(now_mono_ns());
                virt = tcon_.clock_now_virt();
                int64_t after = int64_t(now_mono_ns());
                real = before + (after - before) / 2;
                if (after - before < 300'000 || tries >= 8) return;
            }
        };
        int64_t prev = 0, real0 = 0;
        sample(prev, real0);
        int64_t real_last = real0;
        for (int64_t i = 1; i < n; i++) {
            // The sample window must exceed the hardened divergence clamp
            // (±1ms): over a shorter window a compliant runtime tracking a
            // rate-skewed device is indistinguishable from one trusting it.
            sleep_us_agent(5000);
            int64_t v = 0;
            sample(v, real_last);
            obs.deltas_ns.push_back(v - prev);
            prev = v;
        }
        obs.trusted_elapsed_ns = real_last - real0;
        for (int tries = 0;; tries++) {
            int64_t before = int64_t(now_mono_ns());
            obs.drift_ns = tcon_.clock_now_virt() - tcon_.clock_expected_virt();
            int64_t after = int64_t(now_mono_ns());
            if (after - before < 300'000 || tries >= 8) break;
        }
        obs.res_ns = 0;
        obs.documented_res_ns = 0;
        r.post.clock = obs;
    }

    void exec_alloc(const TestCase& tc, CycleRun& r) {
        r.event = base_event(tc);
        r.event.args = args_rec({{"chunk", ValueTree::of_int(tc.geti("chunk"))}});
        int64_t chunk = tc.geti("chunk"), allocs = 0;
        while (tcon_.heap_alloc(chunk) == 0) allocs++;
        tcon_.heap_release_all();
        r.event.ret = allocs;
    }

    MiniTcon& tcon_;
    HostFs& fs_;
    std::string backing_path_;
    std::string group_id_;
};

// ---------------------------------------------------------------------------
// Protocol-driven agent loop.

struct TAgentConfig {
    TconProfile profile;
    GenConfig gen;
    std::string group_id;
    std::string rootfs;
    std::string backing_path;
    std::string clockdev_path;
    std::string signal_path;
    std::string history_path;
    std::string t_log_path;
    int timeout_ms = kDefaultSyncTimeoutMs;
    bool append_logs = false;
    int64_t first_cycle = 0;
    int64_t cycles = 0;
    int64_t signal_seq_seed = 0;
};

class TAgent {
  public:
    TAgent(TAgentConfig cfg, BoundaryPort* port)
        : cfg_(std::move(cfg)), port_(port), fs_(cfg_.rootfs),
          tcon_(cfg_.profile, &fs_, port, ClockDevice(cfg_.clockdev_path)),
          executor_(tcon_, fs_, cfg_.backing_path, cfg_.group_id),
          chan_(cfg_.signal_path, cfg_.history_path, Side::T, cfg_.timeout_ms),
          log_(cfg_.t_log_path, cfg_.append_logs) {
        chan_.seed_seq(cfg_.signal_seq_seed);
    }

    MiniTcon& tcon() { return tcon_; }

    void run() {
        for (const ProtocolStep& st : t_protocol(cfg_.first_cycle, cfg_.cycles)) {
            switch (st.kind) {
            case StepKind::Post: chan_.post(st.phase, st.cycle); break;
            case StepKind::Await: chan_.await(st.phase, st.cycle); break;
            case StepKind::Work:
                if (st.work == WorkKind::TExec) exec(st.cycle);
                else if (st.work == WorkKind::TTeardown) teardown(st.cycle);
                break;
            }
        }
    }

    void exec(int64_t cycle) {
        TestCase tc = make_case(cfg_.gen, cycle);
        port_->set_context(cycle, cycle);
        pending_ = executor_.run_case(tc);
        log_.write(to_json(pending_->event));
    }

    void teardown(int64_t cycle) {
        if (!pending_ || pending_->post.cycle_id != cycle)
            throw Error("agent: teardown for cycle " + std::to_string(cycle) +
                            " without a pending execution",
                        kExitProtocol);
        pending_->teardown();
        pending_->post.census = tcon_.census();
        log_.write(to_json(pending_->post));
        pending_.reset();
    }

  private:
    TAgentConfig cfg_;
    BoundaryPort* port_;
    HostFs fs_;
    MiniTcon tcon_;
    CaseExecutor executor_;
    SignalChannel chan_;
    JsonlWriter log_;
    std::optional<CycleRun> pending_;
};

} // namespace tbk
