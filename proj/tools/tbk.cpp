// Operator entry point: run / replay / report over a campaign artifact
// directory. Exit codes: 0 ok, 1 findings (with --fail-on-findings), 2 usage,
// 3 capability refusal, 4 protocol/runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tbk/tbk.hpp"

namespace {

std::string default_out() {
    const char* env = std::getenv("TBK_OUT");
    return env && *env ? env : "out";
}

std::vector<tbk::MutationRule> load_rules(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw tbk::Error("cannot open mutations file " + path, tbk::kExitUsage);
    tbk::ojson j;
    try {
        j = tbk::ojson::parse(in);
    } catch (const std::exception& e) {
        throw tbk::Error("mutations file " + path + ": " + e.what(), tbk::kExitUsage);
    }
    if (!j.is_array())
        throw tbk::Error("mutations file must be a JSON array of rules", tbk::kExitUsage);
    std::vector<tbk::MutationRule> rules;
    for (const tbk::ojson& r : j) {
        try {
            rules.push_back(tbk::mutation_rule_from_json(r));
        } catch (const std::exception& e) {
            throw tbk::Error("bad mutation rule in " + path + ": " + e.what(),
                             tbk::kExitUsage);
        }
    }
    return rules;
}

int cmd_run(const tbk::CampaignConfig& cfg) {
    tbk::CampaignOutcome out = tbk::run_campaign(cfg, tbk::run_window_auto);
    std::cout << "campaign " << cfg.group_id() << ": " << out.analysis.t_event_count
              << " cycles, " << out.analysis.findings.size() << " finding(s)\n";
    std::cout << "artifacts: " << tbk::Artifacts(cfg.out_dir).root << "\n";
    for (const tbk::Finding& f : out.analysis.findings)
        std::cout << "  [" << tbk::to_string(f.severity) << "] " << f.dedup_key()
                  << " (first cycle " << f.cycle_id << ")\n";
    return out.exit_code(cfg.fail_on_findings);
}

int cmd_replay(const std::string& out_dir, int64_t cycle) {
    tbk::ReplayResult r = tbk::replay_cycle(out_dir, cycle, tbk::run_window_auto);
    for (const tbk::BoundaryEvent& e : r.events) {
        tbk::ojson j = tbk::to_json(e);
        j.erase("mono_ts"); // replay output is diff-stable
        std::cout << j.dump() << "\n";
    }
    for (const tbk::Annotation& a : r.annotations) std::cout << tbk::to_json(a).dump() << "\n";
    if (r.post) std::cout << tbk::to_json(*r.post).dump() << "\n";
    return tbk::kExitOk;
}

int cmd_report(const std::string& out_dir, const std::string& format) {
    tbk::Artifacts art(out_dir);
    if (!std::filesystem::exists(art.t_log()))
        throw tbk::Error("no campaign logs under " + art.root, tbk::kExitUsage);
    tbk::CampaignOutcome out = tbk::regenerate_report(out_dir);
    if (format == "jsonl") {
        for (const tbk::Finding& f : out.analysis.findings)
            std::cout << tbk::to_json(f).dump() << "\n";
    } else {
        std::cout << tbk::render_report(out.acfg, out.analysis);
    }
    return tbk::kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"differential trust-boundary fuzzer"};
    app.require_subcommand(1);

    // ---- run
    tbk::CampaignConfig cfg;
    cfg.out_dir = default_out();
    std::string mutations_file;
    CLI::App* run = app.add_subcommand("run", "execute a fuzzing campaign");
    run->add_option("--profile", cfg.profile_name, "target profile preset")
        ->default_val(cfg.profile_name);
    run->add_option("--adapter", cfg.adapter, "boundary adapter")
        ->check(CLI::IsMember({"sim", "trace"}))
        ->default_val(cfg.adapter);
    run->add_option("--budget", cfg.budget, "number of cycles")->default_val(cfg.budget);
    run->add_option("--seed", cfg.seed, "campaign seed")->default_val(cfg.seed);
    run->add_option("--out", cfg.out_dir, "artifact directory")->default_val(cfg.out_dir);
    run->add_option("--mutations", mutations_file, "JSON rule file (overrides schedule)");
    run->add_option("--timeout-ms", cfg.timeout_ms, "sync timeout per phase")
        ->default_val(cfg.timeout_ms);
    run->add_flag("--resume", cfg.resume, "continue an interrupted campaign");
    run->add_flag("--fail-on-findings", cfg.fail_on_findings,
                  "exit 1 if any finding is emitted");

    // ---- replay
    std::string replay_out = default_out();
    int64_t replay_cycle = -1;
    std::string replay_seed;
    CLI::App* replay = app.add_subcommand("replay", "re-execute one recorded cycle");
    replay->add_option("--out", replay_out, "artifact directory")->default_val(replay_out);
    replay->add_option("--cycle", replay_cycle, "cycle id to replay")->required();
    replay->add_option("--seed", replay_seed,
                       "not allowed: the seed comes from the artifacts");

    // ---- report
    std::string report_out = default_out();
    std::string report_format = "text";
    CLI::App* report = app.add_subcommand("report", "re-analyze logs and print the report");
    report->add_option("--out", report_out, "artifact directory")->default_val(report_out);
    report->add_option("--format", report_format, "output format")
        ->check(CLI::IsMember({"text", "jsonl"}))
        ->default_val(report_format);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? tbk::kExitOk : tbk::kExitUsage;
    }

    try {
        if (run->parsed()) {
            if (cfg.budget < 1)
                throw tbk::Error("--budget must be at least 1", tbk::kExitUsage);
            if (!mutations_file.empty()) {
                cfg.custom_rules = load_rules(mutations_file);
                cfg.mutation_source = "file:" + mutations_file;
            }
            return cmd_run(cfg);
        }
        if (replay->parsed()) {
            if (!replay_seed.empty())
                throw tbk::Error("replay takes its seed from the artifacts; "
                                 "--seed is not allowed",
                                 tbk::kExitUsage);
            return cmd_replay(replay_out, replay_cycle);
        }
        if (report->parsed()) return cmd_report(report_out, report_format);
    } catch (const tbk::Error& e) {
        std::cerr << "tbk: " << e.what() << "\n";
        return e.exit_code ? e.exit_code : tbk::kExitProtocol;
    } catch (const std::exception& e) {
        std::cerr << "tbk: " << e.what() << "\n";
        return tbk::kExitProtocol;
    }
    return tbk::kExitUsage;
}
