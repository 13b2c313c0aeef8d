// End-to-end campaign integration: full runs through the in-process window
// runner (both protocol halves over the real signal file), artifact layout,
// resume-after-kill, determinism, custom mutation rules, and the CLI binary.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "tbk/tbk.hpp"

namespace fs = std::filesystem;
using namespace tbk;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("tbk_ic_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

CampaignConfig make_cfg(const std::string& profile, int64_t budget, uint64_t seed,
                        const std::string& out_dir) {
    CampaignConfig cfg;
    cfg.profile_name = profile;
    cfg.budget = budget;
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    return cfg;
}

std::set<std::string> finding_keys(const AnalysisResult& r) {
    std::set<std::string> keys;
    for (const Finding& f : r.findings) keys.insert(f.dedup_key());
    return keys;
}

std::set<std::string> all_expected_keys() {
    std::set<std::string> keys;
    for (const auto& e : kToggleExpectations) keys.insert(expected_dedup_key(e));
    return keys;
}

struct CmdResult {
    int code = -1;
    std::string out;
};

CmdResult run_cli(const std::string& args) {
    std::string cmd = std::string(TBK_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    CmdResult r;
    char buf[4096];
    size_t n;
    while ((n = ::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

} // namespace

// ---------------------------------------------------------------------------

TEST_CASE("campaign: hardened run is clean and fully accounted") {
    TempDir td("hardened");
    CampaignConfig cfg = make_cfg("hardened", 17 * 20, 42, td.file("out"));
    CampaignOutcome out = run_campaign(cfg);

    CHECK(out.analysis.findings.empty());
    CHECK(out.analysis.orphans.empty());
    CHECK(out.analysis.completeness_violations == 0);
    CHECK(out.analysis.census_imbalances == 0);
    CHECK(out.analysis.classification_conflicts == 0);
    CHECK(out.analysis.missing_posts == 0);
    CHECK(out.analysis.t_event_count == cfg.budget);
    CHECK(out.analysis.post_count == cfg.budget);
    CHECK(out.analysis.first_cycle == 0);
    CHECK(out.analysis.last_cycle == cfg.budget - 1);
    CHECK(out.exit_code(/*fail_on_findings=*/true) == kExitOk);

    SECTION("artifact layout exists under the output directory") {
        Artifacts art(cfg.out_dir);
        for (const std::string& p :
             {art.t_log(), art.h_log(), art.history(), art.findings(), art.orphans(),
              art.report(), art.config()})
            CHECK(fs::exists(p));
        CHECK(fs::is_directory(art.rootfs()));
        CHECK_FALSE(fs::exists(art.lock())); // released on completion
        // config round-trips to the same campaign identity
        std::ifstream in(art.config());
        CampaignConfig stored = campaign_config_from_json(ojson::parse(in));
        CHECK(stored.group_id() == cfg.group_id());
        CHECK(stored.budget == cfg.budget);
    }

    SECTION("interface matrix matches the policy table") {
        std::map<std::string, IfaceRow> rows;
        for (const IfaceRow& r : out.analysis.matrix) rows[r.name] = r;
        REQUIRE(rows.size() == corpus().all().size()); // every syscall observed
        for (const auto& [name, r] : rows) {
            INFO("row " << name);
            CHECK(r.calls >= 3);
            CHECK(r.ok);
            CHECK(r.policy == r.observed);
        }
        CHECK(rows.at("getpid").policy == HandlingClass::Internal);
        CHECK(rows.at("getpid").leak == "none");
        CHECK(rows.at("read").policy == HandlingClass::Translated);
        CHECK(rows.at("read").note.find("pread64") != std::string::npos);
        CHECK(rows.at("mmap").policy == HandlingClass::Translated);
        CHECK(rows.at("open").policy == HandlingClass::Forwarded);
        CHECK(rows.at("open").leak == "path+scalars");
        CHECK(rows.at("mprotect").policy == HandlingClass::Internal);
    }

    SECTION("mutations were exercised but the hardened target shrugged them off") {
        CHECK(out.analysis.annotation_count > 0);
        LoadedLogs logs = load_logs(Artifacts(cfg.out_dir).t_log(),
                                    Artifacts(cfg.out_dir).h_log());
        std::set<MutationTarget> targets;
        for (const Annotation& a : logs.annotations) targets.insert(a.rule.target);
        CHECK(targets.count(MutationTarget::SyscallReturn) == 1);
        CHECK(targets.count(MutationTarget::ClockSource) == 1);
        CHECK(targets.count(MutationTarget::SnapshotStore) == 1);
        CHECK(targets.count(MutationTarget::VirtqDesc) == 1);
        CHECK(out.analysis.probes.clock_armed > 0);
    }

    SECTION("report regeneration from logs is byte-stable") {
        std::string first = slurp(Artifacts(cfg.out_dir).report());
        CampaignOutcome again = regenerate_report(cfg.out_dir);
        CHECK(slurp(Artifacts(cfg.out_dir).report()) == first);
        CHECK(finding_keys(again.analysis) == finding_keys(out.analysis));
        CHECK(first.find("== trust-boundary campaign report ==") == 0);
        CHECK(first.find("profile: hardened") != std::string::npos);
    }
}

TEST_CASE("campaign: vulnerable-all surfaces all twelve findings, no noise") {
    TempDir td("vulnall");
    CampaignConfig cfg = make_cfg("vulnerable-all", 17 * 36, 0, td.file("out"));
    CampaignOutcome out = run_campaign(cfg);

    CHECK(finding_keys(out.analysis) == all_expected_keys());
    CHECK(out.analysis.orphans.empty());
    CHECK(out.analysis.completeness_violations == 0);
    CHECK(out.exit_code(/*fail_on_findings=*/true) == kExitFindings);

    SECTION("findings carry evidence, the documented severity, and a first cycle") {
        for (const Finding& f : out.analysis.findings) {
            INFO("finding " << f.dedup_key());
            CHECK(f.severity == severity_of(f.category));
            CHECK_FALSE(f.evidence.empty());
            CHECK(f.evidence.size() <= kEvidenceCap);
            CHECK(f.cycle_id >= 0);
            CHECK(f.cycle_id < cfg.budget);
            CHECK_FALSE(f.description.empty());
        }
    }

    SECTION("probe counters reflect the seeded misbehavior") {
        const ProbeStats& p = out.analysis.probes;
        CHECK(p.pf_stale >= 1);
        CHECK(p.vq_accepted_invalid >= 1);
        CHECK(p.clock_flagged >= 1);
        CHECK(p.pf_writes >= 1);
        CHECK(p.pf_verifies >= 1);
    }

    SECTION("findings.jsonl round-trips the analysis") {
        std::vector<Finding> from_disk;
        for (const ojson& j : read_jsonl(Artifacts(cfg.out_dir).findings()))
            from_disk.push_back(finding_from_json(j));
        REQUIRE(from_disk.size() == out.analysis.findings.size());
        for (size_t i = 0; i < from_disk.size(); i++) {
            CHECK(from_disk[i].dedup_key() == out.analysis.findings[i].dedup_key());
            CHECK(from_disk[i].cycle_id == out.analysis.findings[i].cycle_id);
            CHECK(from_disk[i].evidence.size() ==
                  out.analysis.findings[i].evidence.size());
        }
    }
}

TEST_CASE("campaign: single-toggle runs find exactly their own defect") {
    // Spot-check three toggles with distinct witness channels (syscall oracle,
    // host lie consumption, store replay); the full diagonal runs in the
    // acceptance suite.
    for (const std::string toggle :
         {"mprotect_bug", "iago_bug", "pf_rollback_bug"}) {
        DYNAMIC_SECTION("toggle " << toggle) {
            TempDir td("diag_" + toggle);
            CampaignConfig cfg = make_cfg(toggle, 17 * 12, 1, td.file("out"));
            CampaignOutcome out = run_campaign(cfg);
            std::set<std::string> expected;
            for (const auto& e : kToggleExpectations)
                if (toggle == e.toggle) expected.insert(expected_dedup_key(e));
            CHECK(finding_keys(out.analysis) == expected);
            CHECK(out.analysis.orphans.empty());
            CHECK(out.analysis.completeness_violations == 0);
        }
    }
}

TEST_CASE("campaign: identical configs produce byte-identical artifacts") {
    TempDir td("determinism");
    CampaignConfig a = make_cfg("vulnerable-all", 17 * 12, 5, td.file("a"));
    CampaignConfig b = make_cfg("vulnerable-all", 17 * 12, 5, td.file("b"));
    run_campaign(a);
    run_campaign(b);

    std::string fa = slurp(Artifacts(a.out_dir).findings());
    std::string fb = slurp(Artifacts(b.out_dir).findings());
    CHECK_FALSE(fa.empty());
    CHECK(fa == fb);
    CHECK(slurp(Artifacts(a.out_dir).report()) == slurp(Artifacts(b.out_dir).report()));
}

TEST_CASE("campaign: a killed run resumes to a complete, clean log") {
    TempDir td("resume");
    CampaignConfig cfg = make_cfg("hardened", 17 * 36, 9, td.file("out"));
    Artifacts art(cfg.out_dir);

    pid_t child = ::fork();
    REQUIRE(child >= 0);
    if (child == 0) {
        try {
            run_campaign(cfg);
        } catch (...) {
        }
        ::_exit(0);
    }

    // Let it get partway into the window, then kill it without ceremony.
    bool started = false;
    for (int i = 0; i < 3000; i++) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        std::error_code ec;
        if (fs::exists(art.t_log(), ec) && fs::file_size(art.t_log(), ec) > 2000) {
            started = true;
            break;
        }
    }
    REQUIRE(started);
    ::kill(child, SIGKILL);
    ::waitpid(child, nullptr, 0);

    int64_t interrupted_at = compute_resume(art.history()).next_cycle;
    INFO("killed with next_cycle=" << interrupted_at);
    CHECK(interrupted_at < cfg.budget); // genuinely interrupted mid-run

    CampaignConfig rcfg = cfg;
    rcfg.resume = true;
    CampaignOutcome out = run_campaign(rcfg); // steals the dead child's lock

    CHECK(out.analysis.t_event_count == cfg.budget);
    CHECK(out.analysis.post_count == cfg.budget);
    CHECK(out.analysis.completeness_violations == 0);
    CHECK(out.analysis.census_imbalances == 0);
    CHECK(out.analysis.orphans.empty());
    CHECK(out.analysis.findings.empty());

    // every cycle id appears exactly once in the target log
    LoadedLogs logs = load_logs(art.t_log(), art.h_log());
    std::map<int64_t, int> per_cycle;
    for (const BoundaryEvent& e : logs.t_events) per_cycle[e.cycle_id]++;
    REQUIRE(int64_t(per_cycle.size()) == cfg.budget);
    for (const auto& [cycle, n] : per_cycle) {
        INFO("cycle " << cycle);
        CHECK(n == 1);
    }

    // the handshake history ends with the final cycle's DONE
    auto hist = read_signal_history(art.history());
    REQUIRE_FALSE(hist.empty());
    CHECK(hist.back().phase == Phase::Done);
    CHECK(hist.back().cycle_id == cfg.budget - 1);
}

TEST_CASE("campaign: custom rules narrow the schedule; iago consumption is caught") {
    MutationRule rule;
    rule.target = MutationTarget::SyscallReturn;
    rule.strategy = MutationStrategy::SignFlip;
    rule.seed = 4;
    rule.applicability = "read";

    auto run_with_rule = [&](const std::string& profile, const std::string& dir) {
        CampaignConfig cfg = make_cfg(profile, 17 * 6, 2, dir);
        cfg.custom_rules = {rule};
        cfg.mutation_source = "file:test-rules";
        return run_campaign(cfg);
    };

    TempDir td("custom");
    CampaignOutcome hardened = run_with_rule("hardened", td.file("h"));
    CHECK(hardened.analysis.findings.empty());
    CHECK(hardened.analysis.annotation_count > 0);
    LoadedLogs hlogs = load_logs(Artifacts(td.file("h")).t_log(),
                                 Artifacts(td.file("h")).h_log());
    for (const Annotation& a : hlogs.annotations) {
        CHECK(a.rule.target == MutationTarget::SyscallReturn);
        CHECK(a.rule.strategy == MutationStrategy::SignFlip);
        CHECK(a.note == "sign_flip"); // crossing-time note names the strategy
    }

    CampaignOutcome lying = run_with_rule("iago_bug", td.file("i"));
    std::set<std::string> keys = finding_keys(lying.analysis);
    REQUIRE(keys.size() == 1);
    CHECK(*keys.begin() == "iago-silent-corruption|host-boundary|untrusted-value-consumed");
}

TEST_CASE("campaign: capability refusal is an error before any execution") {
    MutationRule rule;
    rule.target = MutationTarget::VirtqDesc;
    rule.strategy = MutationStrategy::InflateLength;
    rule.seed = 1;
    rule.applicability = "used_len";

    TempDir td("caprefusal");
    CampaignConfig cfg = make_cfg("hardened", 17, 0, td.file("out"));
    cfg.adapter = "trace"; // no DMA observation under the tracer
    cfg.custom_rules = {rule};
    try {
        run_campaign(cfg);
        FAIL("expected capability refusal");
    } catch (const Error& e) {
        CHECK(e.exit_code == kExitCapability);
        CHECK(std::string(e.what()).find("observe_dma") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(Artifacts(cfg.out_dir).t_log())); // nothing ran
}

TEST_CASE("cli: run, report, replay, and the documented exit codes") {
    TempDir td("cli");
    std::string out = td.file("out");

    SECTION("run + report + deterministic replay") {
        CmdResult run = run_cli("run --profile hardened --budget 34 --seed 3 --out " + out);
        INFO(run.out);
        REQUIRE(run.code == kExitOk);
        CHECK(run.out.find("0 finding(s)") != std::string::npos);
        CHECK(run.out.find("artifacts: ") != std::string::npos);

        CmdResult rep = run_cli("report --out " + out);
        REQUIRE(rep.code == kExitOk);
        CHECK(rep.out.find("== trust-boundary campaign report ==") == 0);
        CHECK(rep.out.find("profile: hardened") != std::string::npos);
        CHECK(rep.out.find("== findings: 0 ==") != std::string::npos);

        CmdResult repj = run_cli("report --format jsonl --out " + out);
        REQUIRE(repj.code == kExitOk);
        CHECK(repj.out.empty()); // no findings, no lines

        CmdResult r1 = run_cli("replay --out " + out + " --cycle 5");
        CmdResult r2 = run_cli("replay --out " + out + " --cycle 5");
        REQUIRE(r1.code == kExitOk);
        CHECK_FALSE(r1.out.empty());
        CHECK(r1.out == r2.out); // byte-stable replay
        // each replay line is a JSON record for the requested cycle
        std::istringstream lines(r1.out);
        std::string line;
        int events = 0;
        while (std::getline(lines, line)) {
            ojson j = ojson::parse(line);
            CHECK(j.at("cycle_id").get<int64_t>() == 5);
            if (is_event_record(j)) events++;
        }
        CHECK(events >= 2); // T record and its H crossings
    }

    SECTION("vulnerable run with --fail-on-findings exits 1 and lists keys") {
        CmdResult run = run_cli(
            "run --profile improper_return_sendfile --budget 102 --seed 1 "
            "--fail-on-findings --out " + out);
        INFO(run.out);
        REQUIRE(run.code == kExitFindings);
        CHECK(run.out.find("improper-return|sendfile|readonly-outfd-success") !=
              std::string::npos);
    }

    SECTION("usage errors exit 2") {
        CHECK(run_cli("run --budget 0 --out " + out).code == kExitUsage);
        CHECK(run_cli("run --profile not_a_profile --out " + out).code == kExitUsage);
        CHECK(run_cli("run --adapter teleport --out " + out).code == kExitUsage);
        CHECK(run_cli("bogus-subcommand").code == kExitUsage);
        CHECK(run_cli("report --out " + td.file("empty")).code == kExitUsage);
        CHECK(run_cli("replay --out " + td.file("empty") + " --cycle 0").code ==
              kExitUsage);
    }

    SECTION("replay refuses a seed override") {
        CmdResult run = run_cli("run --profile hardened --budget 17 --seed 3 --out " + out);
        REQUIRE(run.code == kExitOk);
        CmdResult r = run_cli("replay --out " + out + " --cycle 1 --seed 7");
        CHECK(r.code == kExitUsage);
        CHECK(r.out.find("seed") != std::string::npos);
        CmdResult beyond = run_cli("replay --out " + out + " --cycle 99");
        CHECK(beyond.code == kExitUsage);
    }

    SECTION("mutations file: accepted, validated, and capability-checked") {
        std::string rules = td.file("rules.json");
        {
            std::ofstream f(rules);
            f << R"([{"target":"syscall_return","strategy":"sign_flip","seed":4,"applicability":"read"}])";
        }
        CmdResult ok = run_cli("run --profile hardened --budget 34 --seed 2 --mutations " +
                               rules + " --out " + out);
        INFO(ok.out);
        REQUIRE(ok.code == kExitOk);
        CHECK(ok.out.find("0 finding(s)") != std::string::npos);

        std::string bad = td.file("bad.json");
        {
            std::ofstream f(bad);
            f << R"({"target":"syscall_return"})"; // not an array
        }
        CHECK(run_cli("run --mutations " + bad + " --out " + out).code == kExitUsage);
        CHECK(run_cli("run --mutations " + td.file("missing.json") + " --out " + out)
                  .code == kExitUsage);

        std::string vq = td.file("vq.json");
        {
            std::ofstream f(vq);
            f << R"([{"target":"virtq_desc","strategy":"inflate_length","seed":1,"applicability":"used_len"}])";
        }
        CmdResult cap = run_cli("run --adapter trace --mutations " + vq + " --out " + out);
        CHECK(cap.code == kExitCapability);
        CHECK(cap.out.find("capability") != std::string::npos);
    }
}
