#pragma once
// Out-of-process adapter: the target agent runs in a forked child under
// ptrace, and the monitor observes real syscalls instead of an in-process
// port. Boundary crossings are bracketed by marker syscalls (gettid with a
// magic first argument — harmless, ignores its arguments, never fails) that
// carry (cycle, seq, nr), so the tracer records exactly the crossings the
// target announces and nothing else. Unrelated process activity and the
// agent's own bookkeeping I/O (logs, signal file) fall outside the brackets
// and are never attributed.
//
// Return mutation happens by rewriting rax at syscall-exit: the child's relay
// then sees exactly what a malicious host kernel would have delivered.

#include <sys/ptrace.h>
#include <sys/syscall.h>
#include <sys/uio.h>
#include <sys/user.h>
#include <sys/wait.h>

#include "tbk/campaign.hpp"

namespace tbk {

inline constexpr uint64_t kTraceMarkBegin = 0x74626b31; // "tbk1"
inline constexpr uint64_t kTraceMarkEnd = 0x74626b32;   // "tbk2"

// Child-side port: executes the call for real, bracketed by markers. The
// value returned is whatever landed in rax — i.e. the tracer-rewritten value
// when a mutation was armed.
class TraceChildPort : public BoundaryPort {
  public:
    void set_context(int64_t cycle, int64_t seq) override {
        cycle_ = cycle;
        seq_ = seq;
    }

    int64_t cross(const HostCall& c) override {
        ::syscall(SYS_gettid, kTraceMarkBegin, cycle_, seq_, c.nr);
        int64_t ret = execute_host_call(c);
        ::syscall(SYS_gettid, kTraceMarkEnd, cycle_, seq_, c.nr);
        return ret;
    }

  private:
    int64_t cycle_ = -1;
    int64_t seq_ = -1;
};

// Tracer-side memory access for argument capture.
class PtraceMemReader : public MemReader {
  public:
    explicit PtraceMemReader(pid_t pid) : pid_(pid) {}

    bool read_mem(uint64_t addr, void* dst, size_t n) override {
        if (!addr || !n) return false;
        iovec local{dst, n};
        iovec remote{reinterpret_cast<void*>(addr), n};
        if (process_vm_readv(pid_, &local, 1, &remote, 1, 0) == ssize_t(n)) return true;
        // Fallback: word-by-word peek (slow path, e.g. partially mapped tail).
        uint8_t* out = static_cast<uint8_t*>(dst);
        size_t done = 0;
        while (done < n) {
            errno = 0;
            long word = ptrace(PTRACE_PEEKDATA, pid_, addr + done, nullptr);
            if (word == -1 && errno != 0) return false;
            size_t take = std::min(sizeof(long), n - done);
            memcpy(out + done, &word, take);
            done += take;
        }
        return true;
    }

  private:
    pid_t pid_;
};

// ---------------------------------------------------------------------------
// Tracer pump: steps the child syscall-by-syscall, decoding marker brackets.
// Runs on its own thread concurrently with the H protocol thread; the two
// meet only inside HSession::finish_cross, which is mutex-guarded.

inline void trace_pump(pid_t pid, HSession* session) {
    if (ptrace(PTRACE_SETOPTIONS, pid, 0, PTRACE_O_TRACESYSGOOD | PTRACE_O_EXITKILL) < 0)
        throw Error("ptrace SETOPTIONS failed: " + std::string(strerror(errno)),
                    kExitProtocol);

    bool expecting = false;   // inside a marker bracket, crossing not yet seen
    bool in_crossing = false; // between entry and exit of the bracketed call
    int64_t m_cycle = -1, m_seq = -1, m_nr = -1;
    ValueTree pending_args;
    int deliver_sig = 0;

    for (;;) {
        if (ptrace(PTRACE_SYSCALL, pid, 0, deliver_sig) < 0)
            throw Error("ptrace SYSCALL failed: " + std::string(strerror(errno)),
                        kExitProtocol);
        deliver_sig = 0;
        int status = 0;
        if (waitpid(pid, &status, 0) < 0)
            throw Error("waitpid failed: " + std::string(strerror(errno)), kExitProtocol);
        if (WIFEXITED(status)) {
            int code = WEXITSTATUS(status);
            if (code != 0)
                throw Error("traced target exited with code " + std::to_string(code),
                            code);
            return;
        }
        if (WIFSIGNALED(status))
            throw Error("traced target killed by signal " +
                            std::to_string(WTERMSIG(status)),
                        kExitProtocol);
        if (!WIFSTOPPED(status)) continue;
        int ws = WSTOPSIG(status);
        if (ws != (SIGTRAP | 0x80)) {
            // Genuine signal: forward it; swallow our own trap/stop noise.
            if (ws != SIGTRAP && ws != SIGSTOP) deliver_sig = ws;
            continue;
        }

        user_regs_struct regs{};
        if (ptrace(PTRACE_GETREGS, pid, 0, &regs) < 0) continue;
        bool entry = int64_t(regs.rax) == -ENOSYS; // kernel's entry sentinel
        int64_t nr = int64_t(regs.orig_rax);

        if (entry) {
            if (nr == SYS_gettid && regs.rdi == kTraceMarkBegin) {
                m_cycle = int64_t(regs.rsi);
                m_seq = int64_t(regs.rdx);
                m_nr = int64_t(regs.r10);
                expecting = true;
                in_crossing = false;
            } else if (nr == SYS_gettid && regs.rdi == kTraceMarkEnd) {
                expecting = false;
                in_crossing = false;
            } else if (expecting && !in_crossing && nr == m_nr) {
                std::array<int64_t, 6> a{int64_t(regs.rdi), int64_t(regs.rsi),
                                         int64_t(regs.rdx), int64_t(regs.r10),
                                         int64_t(regs.r8),  int64_t(regs.r9)};
                PtraceMemReader mem(pid);
                pending_args = capture_host_args(nr, a, mem);
                in_crossing = true;
            }
        } else if (in_crossing && nr == m_nr) {
            int64_t honest = int64_t(regs.rax);
            int64_t deliver =
                session->finish_cross(m_cycle, m_seq, m_nr, pending_args, honest);
            if (deliver != honest) {
                regs.rax = static_cast<unsigned long long>(deliver);
                if (ptrace(PTRACE_SETREGS, pid, 0, &regs) < 0)
                    throw Error("ptrace SETREGS failed: " + std::string(strerror(errno)),
                                kExitProtocol);
            }
            in_crossing = false;
            expecting = false;
        }
    }
}

// ---------------------------------------------------------------------------
// Window runner. Child: T agent with the marker port. Parent: H protocol
// thread plus the pump on the calling thread.

inline void run_window_trace(const CampaignConfig& cfg, const Artifacts& art,
                             const TconProfile& profile, const Window& w) {
    pid_t pid = fork();
    if (pid < 0) throw Error("fork failed", kExitProtocol);

    if (pid == 0) {
        // ---- child: the target half. _exit always; never unwind into the
        // parent's stack frames or flush its buffers twice.
        int code = kExitOk;
        try {
            if (ptrace(PTRACE_TRACEME, 0, nullptr, nullptr) < 0) _exit(kExitProtocol);
            raise(SIGSTOP); // let the parent set options before anything runs

            TAgentConfig tcfg;
            tcfg.profile = profile;
            tcfg.gen = cfg.gen();
            tcfg.group_id = cfg.group_id();
            tcfg.rootfs = art.rootfs();
            tcfg.backing_path = art.backing();
            tcfg.clockdev_path = art.clockdev();
            tcfg.signal_path = art.signal();
            tcfg.history_path = art.history();
            tcfg.t_log_path = art.t_log();
            tcfg.timeout_ms = cfg.timeout_ms;
            tcfg.append_logs = w.append_logs;
            tcfg.first_cycle = w.first;
            tcfg.cycles = w.count;
            tcfg.signal_seq_seed = w.seq_seed;

            CwdGuard cwd(art.rootfs());
            TraceChildPort port;
            TAgent agent(tcfg, &port);
            agent.run();
        } catch (const Error& e) {
            fprintf(stderr, "target: %s\n", e.what());
            code = e.exit_code ? e.exit_code : kExitProtocol;
        } catch (const std::exception& e) {
            fprintf(stderr, "target: %s\n", e.what());
            code = kExitProtocol;
        }
        _exit(code);
    }

    // ---- parent: monitor half.
    int status = 0;
    if (waitpid(pid, &status, 0) < 0 || !WIFSTOPPED(status)) {
        kill(pid, SIGKILL);
        waitpid(pid, &status, 0);
        throw Error("traced target failed to reach its initial stop", kExitProtocol);
    }

    HMonitorConfig hcfg;
    hcfg.gen = cfg.gen();
    hcfg.caps = cfg.caps();
    hcfg.custom_rules = cfg.custom_rules;
    hcfg.group_id = cfg.group_id();
    hcfg.backing_path = art.backing();
    hcfg.clockdev_path = art.clockdev();
    hcfg.signal_path = art.signal();
    hcfg.history_path = art.history();
    hcfg.h_log_path = art.h_log();
    hcfg.timeout_ms = cfg.timeout_ms;
    hcfg.append_logs = w.append_logs;
    hcfg.first_cycle = w.first;
    hcfg.cycles = w.count;
    hcfg.signal_seq_seed = w.seq_seed;

    HSession session(hcfg);
    std::exception_ptr h_err, pump_err;
    std::thread h_thread([&] {
        try {
            session.run();
        } catch (...) {
            h_err = std::current_exception();
        }
    });
    try {
        trace_pump(pid, &session);
    } catch (...) {
        pump_err = std::current_exception();
        kill(pid, SIGKILL); // unblock H via the dead-peer sync timeout
        waitpid(pid, &status, 0);
    }
    h_thread.join();
    if (pump_err) std::rethrow_exception(pump_err);
    if (h_err) std::rethrow_exception(h_err);
}

// Adapter-dispatching window runner: what the CLI wires into run_campaign.
inline void run_window_auto(const CampaignConfig& cfg, const Artifacts& art,
                            const TconProfile& profile, const Window& w) {
    if (cfg.adapter == "trace") run_window_trace(cfg, art, profile, w);
    else run_window_sim(cfg, art, profile, w);
}

} // namespace tbk
