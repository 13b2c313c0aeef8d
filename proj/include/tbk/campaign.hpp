#pragma once
// Campaign orchestration: artifact layout, single-owner lock, fresh/resume
// setup, windowed execution via an adapter-specific runner, then offline
// analysis and artifact emission.
//
// Resume semantics: a killed campaign restarts at the first cycle without a
// DONE record. The interrupted cycle's partial log records and fixtures are
// dropped, and the persistent store backing and clock device are reset — a
// restarted target is a new enclave instance, so cross-instance freshness is
// out of scope by construction (the store opens Fresh at counter zero).

#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include <signal.h>
#include <unistd.h>

#include "tbk/analyzer.hpp"
#include "tbk/h_monitor.hpp"
#include "tbk/t_agent.hpp"

namespace tbk {

struct CampaignConfig {
    std::string profile_name = "hardened";
    std::string adapter = "sim"; // "sim" | "trace"
    uint64_t seed = 0;
    int64_t budget = 100; // total cycles, numbered [0, budget)
    int timeout_ms = kDefaultSyncTimeoutMs;
    std::string out_dir = "out";
    std::vector<MutationRule> custom_rules; // empty -> built-in schedule
    std::string mutation_source = "default-schedule";
    bool fail_on_findings = false;
    bool resume = false;

    std::string group_id() const {
        return "grp-" + profile_name + "-" + std::to_string(seed);
    }
    Capabilities caps() const {
        return adapter == "trace" ? trace_capabilities() : sim_capabilities();
    }
    GenConfig gen() const {
        // DMA/descriptor observation needs the in-process device; under the
        // trace adapter those probes are excluded from the deck entirely.
        return GenConfig{seed, /*include_virtq=*/caps().observe_dma};
    }
};

inline ojson to_json(const CampaignConfig& c) {
    ojson j;
    j["profile"] = c.profile_name;
    j["adapter"] = c.adapter;
    j["seed"] = c.seed;
    j["budget"] = c.budget;
    j["timeout_ms"] = c.timeout_ms;
    j["mutation_source"] = c.mutation_source;
    ojson rules = ojson::array();
    for (const MutationRule& r : c.custom_rules) rules.push_back(to_json(r));
    j["custom_rules"] = std::move(rules);
    j["group_id"] = c.group_id();
    return j;
}

inline CampaignConfig campaign_config_from_json(const ojson& j) {
    CampaignConfig c;
    c.profile_name = j.at("profile").get<std::string>();
    c.adapter = j.at("adapter").get<std::string>();
    c.seed = j.at("seed").get<uint64_t>();
    c.budget = j.at("budget").get<int64_t>();
    c.timeout_ms = j.at("timeout_ms").get<int>();
    c.mutation_source = j.at("mutation_source").get<std::string>();
    for (const ojson& r : j.at("custom_rules")) c.custom_rules.push_back(mutation_rule_from_json(r));
    return c;
}

// ---------------------------------------------------------------------------
// Artifact layout under the output directory.

struct Artifacts {
    std::string root;

    explicit Artifacts(std::string out_dir)
        : root(std::filesystem::absolute(out_dir).lexically_normal().string()) {}

    std::string rootfs() const { return root + "/rootfs"; }
    std::string signal() const { return root + "/signal"; }
    std::string history() const { return root + "/signal_history.log"; }
    std::string t_log() const { return root + "/t.log"; }
    std::string h_log() const { return root + "/h.log"; }
    std::string backing() const { return root + "/pf_backing.bin"; }
    std::string clockdev() const { return root + "/clockdev.bin"; }
    std::string findings() const { return root + "/findings.jsonl"; }
    std::string orphans() const { return root + "/orphans.jsonl"; }
    std::string report() const { return root + "/report.txt"; }
    std::string config() const { return root + "/campaign.config"; }
    std::string lock() const { return root + "/lock"; }
};

// ---------------------------------------------------------------------------
// Single-owner lock: O_EXCL create with the holder pid; a lock whose holder is
// gone is stale and may be stolen.

class CampaignLock {
  public:
    explicit CampaignLock(std::string path) : path_(std::move(path)) {
        for (int attempt = 0; attempt < 2; attempt++) {
            int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
            if (fd >= 0) {
                std::string pid = std::to_string(::getpid()) + "\n";
                (void)!::write(fd, pid.data(), pid.size());
                ::close(fd);
                held_ = true;
                return;
            }
            if (errno != EEXIST) throw Error("cannot create lock " + path_);
            std::ifstream in(path_);
            long holder = 0;
            in >> holder;
            if (holder > 0 && (::kill(pid_t(holder), 0) == 0 || errno == EPERM))
                throw Error("campaign directory locked by running pid " +
                                std::to_string(holder),
                            kExitProtocol);
            ::unlink(path_.c_str()); // stale holder: steal
        }
        throw Error("cannot acquire lock " + path_, kExitProtocol);
    }

    ~CampaignLock() {
        if (held_) ::unlink(path_.c_str());
    }

    CampaignLock(const CampaignLock&) = delete;
    CampaignLock& operator=(const CampaignLock&) = delete;

  private:
    std::string path_;
    bool held_ = false;
};

// ---------------------------------------------------------------------------
// Setup helpers.

inline void write_text_file(const std::string& path, const std::string& text) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp);
        out << text;
    }
    if (::rename(tmp.c_str(), path.c_str()) != 0)
        throw Error("rename failed for " + path);
}

inline void fresh_reset(const Artifacts& art) {
    namespace fs = std::filesystem;
    fs::remove_all(art.rootfs());
    fs::create_directories(art.rootfs());
    for (const std::string& p :
         {art.signal(), art.history(), art.t_log(), art.h_log(), art.backing(),
          art.clockdev(), art.findings(), art.orphans(), art.report()})
        fs::remove(p);
}

struct ResumePoint {
    int64_t next_cycle = 0;
    int64_t seq_seed = 0;
};

inline ResumePoint compute_resume(const std::string& history_path) {
    ResumePoint rp;
    int64_t last_done = -1;
    for (const SignalState& s : read_signal_history(history_path)) {
        rp.seq_seed = std::max(rp.seq_seed, s.seq);
        if (s.phase == Phase::Done) last_done = std::max(last_done, s.cycle_id);
    }
    rp.next_cycle = last_done + 1;
    return rp;
}

// Keep only records for cycles <= last_done; a crash can leave a torn tail
// and records for the interrupted cycle, both of which must not survive into
// the resumed log.
inline void truncate_log_after(const std::string& path, int64_t last_done) {
    if (!std::filesystem::exists(path)) return;
    std::string kept;
    for (const ojson& j : read_jsonl(path)) {
        auto it = j.find("cycle_id");
        if (it == j.end() || it->get<int64_t>() > last_done) continue;
        kept += j.dump();
        kept += '\n';
    }
    write_text_file(path, kept);
}

inline void prepare_resume(const Artifacts& art, const ResumePoint& rp) {
    namespace fs = std::filesystem;
    truncate_log_after(art.t_log(), rp.next_cycle - 1);
    truncate_log_after(art.h_log(), rp.next_cycle - 1);
    fs::remove(art.signal()); // stale phase cell; history is kept (append)
    fs::remove(art.backing());
    fs::remove(art.clockdev());
    HostFs fsx(art.rootfs());
    fsx.remove_prefix("c" + std::to_string(rp.next_cycle) + "_");
}

// chdir into the fixture root for the duration of a run so forwarded
// relative-path opens resolve identically on both sides of the boundary.
class CwdGuard {
  public:
    explicit CwdGuard(const std::string& dir)
        : saved_(std::filesystem::current_path()) {
        std::filesystem::current_path(dir);
    }
    ~CwdGuard() {
        std::error_code ec;
        std::filesystem::current_path(saved_, ec);
    }

  private:
    std::filesystem::path saved_;
};

// ---------------------------------------------------------------------------
// Windowed execution. A runner executes cycles [first, first+count) against
// the artifact set; the in-process runner drives both protocol halves on two
// threads over the shared signal file.

struct Window {
    int64_t first = 0;
    int64_t count = 0;
    int64_t seq_seed = 0;
    bool append_logs = false;
};

using WindowRunner = std::function<void(const CampaignConfig&, const Artifacts&,
                                        const TconProfile&, const Window&)>;

inline void run_window_sim(const CampaignConfig& cfg, const Artifacts& art,
                           const TconProfile& profile, const Window& w) {
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
    SimPort port(&session);
    TAgent agent(tcfg, &port);

    CwdGuard cwd(art.rootfs());
    std::exception_ptr h_err, t_err;
    std::thread h_thread([&] {
        try {
            session.run();
        } catch (...) {
            h_err = std::current_exception();
        }
    });
    try {
        agent.run();
    } catch (...) {
        t_err = std::current_exception();
    }
    // A dead peer leaves the survivor blocked in await(); the sync timeout
    // bounds how long this join can take.
    h_thread.join();
    if (t_err) std::rethrow_exception(t_err);
    if (h_err) std::rethrow_exception(h_err);
}

// ---------------------------------------------------------------------------
// Analysis + artifact emission (shared by run, resume, and report).

struct CampaignOutcome {
    AnalyzerConfig acfg;
    AnalysisResult analysis;

    int exit_code(bool fail_on_findings) const {
        return fail_on_findings && !analysis.findings.empty() ? kExitFindings : kExitOk;
    }
};

inline CampaignOutcome analyze_and_emit(const CampaignConfig& cfg, const Artifacts& art) {
    AnalyzerConfig acfg;
    acfg.profile = profile_preset(cfg.profile_name);
    acfg.gen = cfg.gen();
    acfg.adapter = cfg.adapter;
    acfg.group_id = cfg.group_id();
    acfg.mutation_source = cfg.mutation_source;
    LoadedLogs logs = load_logs(art.t_log(), art.h_log());
    CampaignOutcome out{acfg, analyze(acfg, logs)};
    write_findings(art.findings(), out.analysis.findings);
    write_orphans(art.orphans(), out.analysis.orphans);
    write_text_file(art.report(), render_report(acfg, out.analysis));
    return out;
}

// ---------------------------------------------------------------------------
// Campaign entry points.

inline CampaignOutcome run_campaign(const CampaignConfig& cfg,
                                    const WindowRunner& runner = run_window_sim) {
    TconProfile profile = profile_preset(cfg.profile_name);
    MutationPlanner planner(cfg.gen(), cfg.caps(), cfg.custom_rules);
    if (auto bad = planner.unsupported_custom_rule())
        throw Error("mutation rule '" + *bad + "' needs a capability the '" +
                        cfg.adapter + "' adapter does not have",
                    kExitCapability);

    Artifacts art(cfg.out_dir);
    std::filesystem::create_directories(art.rootfs());
    CampaignLock lock(art.lock());

    Window w;
    if (cfg.resume && std::filesystem::exists(art.history())) {
        ResumePoint rp = compute_resume(art.history());
        prepare_resume(art, rp);
        w.first = rp.next_cycle;
        w.seq_seed = rp.seq_seed;
        w.append_logs = true;
    } else {
        fresh_reset(art);
    }
    w.count = std::max<int64_t>(0, cfg.budget - w.first);
    write_text_file(art.config(), to_json(cfg).dump(2) + "\n");

    if (w.count > 0) runner(cfg, art, profile, w);
    return analyze_and_emit(cfg, art);
}

// Re-run analysis over existing logs (no execution). The stored config makes
// the report reproducible from the artifact directory alone.
inline CampaignOutcome regenerate_report(const std::string& out_dir) {
    Artifacts art(out_dir);
    std::ifstream in(art.config());
    if (!in) throw Error("no campaign.config under " + art.root, kExitUsage);
    ojson j = ojson::parse(in, nullptr, /*allow_exceptions=*/true);
    CampaignConfig cfg = campaign_config_from_json(j);
    cfg.out_dir = out_dir;
    return analyze_and_emit(cfg, art);
}

// Re-execute one cycle in an isolated sub-directory. Plans and cases are pure
// functions of (seed, cycle), so the re-executed cycle reproduces the original
// boundary traffic; per-instance state (store counter, clock anchor) starts
// fresh, as it would for a new enclave instance.
struct ReplayResult {
    std::vector<BoundaryEvent> events; // T then H, log order
    std::vector<Annotation> annotations;
    std::optional<PostState> post;
};

inline ReplayResult replay_cycle(const std::string& out_dir, int64_t cycle,
                                 const WindowRunner& runner = run_window_sim) {
    Artifacts art(out_dir);
    std::ifstream in(art.config());
    if (!in) throw Error("no campaign.config under " + art.root, kExitUsage);
    CampaignConfig cfg = campaign_config_from_json(ojson::parse(in));
    if (cycle < 0 || cycle >= cfg.budget)
        throw Error("cycle " + std::to_string(cycle) + " outside campaign budget " +
                        std::to_string(cfg.budget),
                    kExitUsage);

    CampaignConfig rcfg = cfg;
    rcfg.out_dir = art.root + "/replay-" + std::to_string(cycle);
    Artifacts rart(rcfg.out_dir);
    std::filesystem::create_directories(rart.rootfs());
    CampaignLock lock(rart.lock());
    fresh_reset(rart);
    TconProfile profile = profile_preset(rcfg.profile_name);
    Window w{cycle, 1, 0, false};
    runner(rcfg, rart, profile, w);

    ReplayResult out;
    LoadedLogs logs = load_logs(rart.t_log(), rart.h_log());
    for (const BoundaryEvent& e : logs.t_events) out.events.push_back(e);
    for (const BoundaryEvent& e : logs.h_events) out.events.push_back(e);
    out.annotations = logs.annotations;
    auto it = logs.posts.find(cycle);
    if (it != logs.posts.end()) out.post = it->second;
    return out;
}

} // namespace tbk
