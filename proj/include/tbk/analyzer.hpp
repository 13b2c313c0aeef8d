#pragma once
// Offline differential analyzer. Input: the two event logs plus the campaign
// parameters needed to regenerate cases and plans. Output: deduplicated
// findings, orphan host events, an interface-classification matrix, and a
// deterministic text report (no timestamps, stable ordering).
//
// Judgment split:
//  - unmutated syscall cycles    -> return/side oracle (oracle.hpp)
//  - mutation-armed cycles       -> acceptance judges below (a finding means
//                                   the target consumed a provably-illegal
//                                   host value; legal injections never count)
//  - probe cycles                -> post-state observations

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tbk/generator.hpp"
#include "tbk/h_monitor.hpp"
#include "tbk/json_io.hpp"
#include "tbk/mutation.hpp"
#include "tbk/oracle.hpp"
#include "tbk/profile.hpp"

namespace tbk {

// Armed-clock acceptance bounds: the virtual clock must advance at the
// trusted rate (ratio window: measurement jitter cancels because both sides
// bracket the same window) and stay near the boot-anchored expectation.
inline constexpr int64_t kClockRatioLoPermille = 600;
inline constexpr int64_t kClockRatioHiPermille = 1400;
inline constexpr int64_t kClockDriftThresholdNs = 5'000'000;

struct LoadedLogs {
    std::vector<BoundaryEvent> t_events;
    std::vector<BoundaryEvent> h_events;
    std::map<int64_t, PostState> posts;
    std::vector<Annotation> annotations;
};

inline LoadedLogs load_logs(const std::string& t_path, const std::string& h_path) {
    LoadedLogs out;
    for (const ojson& j : read_jsonl(t_path)) {
        if (is_event_record(j)) out.t_events.push_back(event_from_json(j));
        else if (is_post_state_record(j)) {
            PostState p = post_state_from_json(j);
            out.posts[p.cycle_id] = std::move(p);
        }
    }
    for (const ojson& j : read_jsonl(h_path)) {
        if (is_event_record(j)) out.h_events.push_back(event_from_json(j));
        else if (is_annotation_record(j)) out.annotations.push_back(annotation_from_json(j));
    }
    return out;
}

struct AnalyzerConfig {
    TconProfile profile;
    GenConfig gen;
    std::string adapter = "sim";
    std::string group_id;
    std::string mutation_source = "default-schedule";
};

struct IfaceRow {
    int64_t nr = 0;
    std::string name;
    HandlingClass policy = HandlingClass::Unknown;
    HandlingClass observed = HandlingClass::Unknown;
    int64_t calls = 0;
    std::string leak;
    std::string note; // e.g. "-> pread64"
    bool ok = false;
};

struct ProbeStats {
    int64_t pf_writes = 0, pf_verifies = 0, pf_fresh = 0, pf_stale = 0;
    int64_t pf_rejected_freshness = 0, pf_rejected_integrity = 0, pf_eviction_flushes = 0;
    int64_t vq_cycles = 0, vq_accepted_invalid = 0, vq_rejected = 0;
    int64_t clock_cycles = 0, clock_armed = 0, clock_flagged = 0;
};

struct AnalysisResult {
    std::vector<Finding> findings; // sorted by dedup key
    std::vector<BoundaryEvent> orphans;
    std::vector<IfaceRow> matrix;
    ProbeStats probes;
    int64_t t_event_count = 0, h_event_count = 0, post_count = 0, annotation_count = 0;
    int64_t first_cycle = 0, last_cycle = -1;
    int64_t completeness_violations = 0;
    int64_t census_imbalances = 0;
    int64_t classification_conflicts = 0;
    int64_t missing_posts = 0;
    std::vector<std::string> diagnostics; // capped detail lines
};

namespace detail {

inline void add_diag(AnalysisResult& r, std::string line) {
    if (r.diagnostics.size() < 20) r.diagnostics.push_back(std::move(line));
}

inline void add_finding(std::map<std::string, Finding>& by_key, Finding f) {
    auto it = by_key.find(f.dedup_key());
    if (it == by_key.end()) by_key.emplace(f.dedup_key(), std::move(f));
    else it->second = merge(it->second, f);
}

inline std::string leak_column(const TconProfile& profile, int64_t nr) {
    if (profile.policy_of(nr).kind == PolicyKind::Internal) return "none";
    const SyscallSpec* spec = corpus().find(nr);
    if (spec)
        for (const ParamSchema& p : spec->params)
            if (p.kind == ArgKind::PathIn) return "path+scalars";
    return "scalars";
}

} // namespace detail

inline AnalysisResult analyze(const AnalyzerConfig& cfg, const LoadedLogs& logs) {
    AnalysisResult res;
    res.t_event_count = int64_t(logs.t_events.size());
    res.h_event_count = int64_t(logs.h_events.size());
    res.post_count = int64_t(logs.posts.size());
    res.annotation_count = int64_t(logs.annotations.size());

    // -- indexes
    std::map<int64_t, const BoundaryEvent*> t_by_cycle;
    for (const BoundaryEvent& e : logs.t_events) {
        auto [it, fresh] = t_by_cycle.emplace(e.cycle_id, &e);
        if (!fresh)
            detail::add_diag(res, "duplicate T event for cycle " +
                                      std::to_string(e.cycle_id));
        res.first_cycle = std::min(res.first_cycle, e.cycle_id);
        res.last_cycle = std::max(res.last_cycle, e.cycle_id);
    }
    if (!t_by_cycle.empty()) res.first_cycle = t_by_cycle.begin()->first;

    std::multimap<std::pair<int64_t, int64_t>, const BoundaryEvent*> h_by_key;
    for (const BoundaryEvent& e : logs.h_events)
        h_by_key.emplace(std::make_pair(e.cycle_id, e.seq), &e);

    std::multimap<int64_t, const Annotation*> notes_by_cycle;
    for (const Annotation& a : logs.annotations) notes_by_cycle.emplace(a.cycle_id, &a);

    auto partners_of = [&](const BoundaryEvent& t) {
        std::vector<const BoundaryEvent*> v;
        auto [lo, hi] = h_by_key.equal_range({t.cycle_id, t.seq});
        for (auto it = lo; it != hi; ++it) v.push_back(it->second);
        return v;
    };
    auto note_with_target = [&](int64_t cycle, MutationTarget target) -> const Annotation* {
        auto [lo, hi] = notes_by_cycle.equal_range(cycle);
        for (auto it = lo; it != hi; ++it)
            if (it->second->rule.target == target) return it->second;
        return nullptr;
    };

    std::map<std::string, Finding> by_key;

    // -- per-syscall aggregation for the interface matrix
    struct Agg {
        std::set<HandlingClass> classes;
        std::set<int64_t> host_nrs;
        int64_t calls = 0;
    };
    std::map<int64_t, Agg> agg;

    // -- walk T events: classification, completeness, oracle judgment
    for (const auto& [cycle, t] : t_by_cycle) {
        auto hs = partners_of(*t);
        if (is_pseudo_op(t->syscall)) {
            if (!hs.empty()) {
                res.completeness_violations++;
                detail::add_diag(res, "probe cycle " + std::to_string(cycle) +
                                          " unexpectedly crossed the boundary");
            }
            continue;
        }

        // classification
        HandlingClass cls;
        if (hs.empty()) {
            cls = HandlingClass::Internal;
        } else {
            bool all_fwd = true;
            for (const BoundaryEvent* h : hs)
                if (h->syscall != t->syscall || !(h->args == t->args)) all_fwd = false;
            cls = all_fwd ? HandlingClass::Forwarded : HandlingClass::Translated;
        }
        Agg& a = agg[t->syscall];
        a.classes.insert(cls);
        a.calls++;
        for (const BoundaryEvent* h : hs) a.host_nrs.insert(h->syscall);

        // completeness vs policy: internal calls never cross, the rest cross
        // exactly once
        const Policy& pol = cfg.profile.policy_of(t->syscall);
        size_t want = pol.kind == PolicyKind::Internal ? 0 : 1;
        if (hs.size() != want) {
            res.completeness_violations++;
            detail::add_diag(res, "cycle " + std::to_string(cycle) + " " +
                                      corpus().name_of(t->syscall) + ": expected " +
                                      std::to_string(want) + " crossings, saw " +
                                      std::to_string(hs.size()));
        }

        // oracle judgment (skip cycles whose return value was host-mutated)
        if (note_with_target(cycle, MutationTarget::SyscallReturn)) continue;
        if (!t->ret) continue;
        TestCase tc = make_case(cfg.gen, cycle);
        auto pit = logs.posts.find(cycle);
        const PostState* post = pit == logs.posts.end() ? nullptr : &pit->second;
        std::vector<EventRef> refs{ref_of(*t)};
        for (const BoundaryEvent* h : hs) refs.push_back(ref_of(*h));
        for (const Violation& v : judge_case(tc, cfg.profile.limits, *t->ret, post))
            detail::add_finding(by_key, make_finding(v.category, v.subsystem, v.trigger,
                                                     v.description, cycle, refs));
    }

    // -- probe post-states
    for (const auto& [cycle, post] : logs.posts) {
        auto tit = t_by_cycle.find(cycle);
        std::vector<EventRef> refs;
        if (tit != t_by_cycle.end()) refs.push_back(ref_of(*tit->second));
        TestCase tc = make_case(cfg.gen, cycle);

        if (post.pf) {
            const PfObs& o = *post.pf;
            if (tc.kind == CaseKind::PfProbe && tc.variant == 0) res.probes.pf_writes++;
            else res.probes.pf_verifies++;
            res.probes.pf_eviction_flushes += o.flushes;
            switch (o.outcome) {
            case PfOutcome::Fresh: res.probes.pf_fresh++; break;
            case PfOutcome::StaleServed:
                res.probes.pf_stale++;
                detail::add_finding(
                    by_key,
                    make_finding(Category::RollbackAccepted, "pf", "stale-flush-accepted",
                                 "store opened a host-substituted stale snapshot as "
                                 "current state (flush counter not bound to enclave "
                                 "expectation)",
                                 cycle, refs));
                break;
            case PfOutcome::RejectedFreshness: res.probes.pf_rejected_freshness++; break;
            case PfOutcome::RejectedIntegrity: res.probes.pf_rejected_integrity++; break;
            }
        }
        if (post.virtq) {
            res.probes.vq_cycles++;
            const VirtqObs& o = *post.virtq;
            if (o.accepted) {
                res.probes.vq_accepted_invalid++;
                if (tc.kind == CaseKind::VirtqProbe && tc.variant == 5)
                    detail::add_finding(
                        by_key,
                        make_finding(Category::IagoSilentCorruption, "host-boundary",
                                     "untrusted-value-consumed",
                                     "device-corrupted DMA page consumed without "
                                     "re-verification (" + o.detail + ")",
                                     cycle, refs));
                else
                    detail::add_finding(
                        by_key,
                        make_finding(Category::OOBAccess, "virtq",
                                     "device-values-out-of-bounds",
                                     "device-supplied descriptor values consumed without "
                                     "bounds validation (" + o.detail + ")",
                                     cycle, refs));
            } else if (!o.detail.empty() && o.detail != "consumed") {
                res.probes.vq_rejected++;
            }
        }
        if (post.clock && tc.kind == CaseKind::ClockProbe) {
            res.probes.clock_cycles++;
            const ClockObs& o = *post.clock;
            if (const Annotation* note = note_with_target(cycle, MutationTarget::ClockSource)) {
                res.probes.clock_armed++;
                int64_t sum = 0;
                bool negative = false;
                for (int64_t d : o.deltas_ns) {
                    sum += d;
                    if (d < 0) negative = true;
                }
                bool ratio_bad = false;
                if (o.trusted_elapsed_ns > 0) {
                    int64_t permille = sum * 1000 / o.trusted_elapsed_ns;
                    ratio_bad = permille < kClockRatioLoPermille ||
                                permille > kClockRatioHiPermille;
                }
                bool drift_bad = o.drift_ns > kClockDriftThresholdNs ||
                                 o.drift_ns < -kClockDriftThresholdNs;
                if (negative || ratio_bad || drift_bad) {
                    res.probes.clock_flagged++;
                    detail::add_finding(
                        by_key,
                        make_finding(Category::StaleClockAccepted, "clock",
                                     "host-controlled-time",
                                     "virtual clock followed a host-mutated transform (" +
                                         note->note + "): observed/trusted elapsed " +
                                         std::to_string(sum) + "/" +
                                         std::to_string(o.trusted_elapsed_ns) +
                                         "ns, drift " + std::to_string(o.drift_ns) + "ns",
                                     cycle, refs));
                }
            }
        }

        // census: every cycle must return the runtime to its baseline
        if (!(post.census == Census{0, 0, 1})) {
            res.census_imbalances++;
            detail::add_diag(res, "census imbalance after cycle " + std::to_string(cycle) +
                                      ": fds=" + std::to_string(post.census.fds) +
                                      " mappings=" + std::to_string(post.census.mappings));
        }
    }

    // -- return-mutation acceptance
    for (const Annotation& a : logs.annotations) {
        if (a.rule.target != MutationTarget::SyscallReturn) continue;
        auto tit = t_by_cycle.find(a.cycle_id);
        if (tit == t_by_cycle.end()) {
            detail::add_finding(
                by_key, make_finding(Category::IagoCrash, "host-boundary",
                                     "crash-on-injected-value",
                                     "target produced no event for a cycle whose host "
                                     "return was mutated",
                                     a.cycle_id, {}));
            continue;
        }
        const BoundaryEvent* t = tit->second;
        auto [lo, hi] = h_by_key.equal_range({a.cycle_id, a.seq});
        const BoundaryEvent* h = lo == hi ? nullptr : lo->second;
        if (!h || !t->ret) continue;
        int64_t cap = plausible_cap(h->syscall, h->args);
        if (*t->ret == a.injected && return_impossible(h->syscall, a.injected, cap)) {
            std::vector<EventRef> refs{ref_of(*t), ref_of(*h)};
            detail::add_finding(
                by_key,
                make_finding(Category::IagoSilentCorruption, "host-boundary",
                             "untrusted-value-consumed",
                             "relay consumed an impossible host return (" +
                                 std::to_string(a.injected) + " for " +
                                 corpus().name_of(h->syscall) + ", honest was " +
                                 std::to_string(a.original) + ", plausible cap " +
                                 std::to_string(cap) + ")",
                             a.cycle_id, refs));
        }
    }

    // -- orphans: host events no target event explains
    for (const BoundaryEvent& h : logs.h_events) {
        auto tit = t_by_cycle.find(h.cycle_id);
        if (tit == t_by_cycle.end() || tit->second->seq != h.seq)
            res.orphans.push_back(h);
    }

    // -- cycles with an event but no post_state (interrupted tail)
    for (const auto& [cycle, t] : t_by_cycle)
        if (!logs.posts.count(cycle)) res.missing_posts++;

    // -- interface matrix
    for (const auto& [nr, spec] : corpus().all()) {
        IfaceRow row;
        row.nr = nr;
        row.name = spec.name;
        row.policy = to_handling(cfg.profile.policy_of(nr).kind);
        row.leak = detail::leak_column(cfg.profile, nr);
        auto it = agg.find(nr);
        if (it == agg.end()) {
            row.observed = HandlingClass::Unknown;
            row.note = "no calls";
            row.ok = false;
        } else {
            const Agg& a = it->second;
            row.calls = a.calls;
            if (a.classes.size() != 1) {
                row.observed = HandlingClass::Unknown;
                row.note = "conflicting classifications";
                row.ok = false;
                res.classification_conflicts++;
            } else {
                row.observed = *a.classes.begin();
                row.ok = row.observed == row.policy;
                const Policy& pol = cfg.profile.policy_of(nr);
                if (pol.kind == PolicyKind::Translated) {
                    if (a.host_nrs.size() == 1)
                        row.note = "-> " + corpus().name_of(*a.host_nrs.begin());
                    row.ok = row.ok && a.host_nrs ==
                                           std::set<int64_t>{pol.translated_to};
                }
            }
        }
        res.matrix.push_back(row);
    }

    for (auto& [key, f] : by_key) res.findings.push_back(f);
    return res;
}

// ---------------------------------------------------------------------------
// Artifact writers/readers

inline void write_findings(const std::string& path, const std::vector<Finding>& findings) {
    JsonlWriter w(path, /*append=*/false);
    for (const Finding& f : findings) w.write(to_json(f));
}

inline std::vector<Finding> read_findings(const std::string& path) {
    std::vector<Finding> out;
    for (const ojson& j : read_jsonl(path)) out.push_back(finding_from_json(j));
    return out;
}

inline void write_orphans(const std::string& path, const std::vector<BoundaryEvent>& orphans) {
    JsonlWriter w(path, /*append=*/false);
    for (const BoundaryEvent& e : orphans) {
        ojson j = to_json(e);
        j.erase("mono_ts"); // keep the artifact byte-stable across runs
        w.write(j);
    }
}

// ---------------------------------------------------------------------------
// Deterministic text report

inline std::string render_report(const AnalyzerConfig& cfg, const AnalysisResult& r) {
    auto pad = [](std::string s, size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    std::string out;
    out += "== trust-boundary campaign report ==\n";
    out += "group: " + cfg.group_id + "\n";
    out += "profile: " + cfg.profile.name + "\n";
    out += "adapter: " + cfg.adapter + "\n";
    out += "mutations: " + cfg.mutation_source + "\n";
    out += "cycles: " + std::to_string(r.t_event_count);
    if (r.last_cycle >= r.first_cycle && r.t_event_count > 0)
        out += " (" + std::to_string(r.first_cycle) + ".." + std::to_string(r.last_cycle) +
               ")";
    out += "\n\n== interface matrix ==\n";
    out += pad("syscall", 14) + pad("policy", 12) + pad("observed", 12) +
           pad("calls", 8) + pad("leak", 14) + pad("ok", 4) + "note\n";
    for (const IfaceRow& row : r.matrix) {
        out += pad(row.name, 14) + pad(to_string(row.policy), 12) +
               pad(to_string(row.observed), 12) + pad(std::to_string(row.calls), 8) +
               pad(row.leak, 14) + pad(row.ok ? "yes" : "NO", 4) + row.note + "\n";
    }
    const ProbeStats& p = r.probes;
    out += "\n== subsystem probes ==\n";
    out += "pf     writes=" + std::to_string(p.pf_writes) +
           " verifies=" + std::to_string(p.pf_verifies) +
           " fresh=" + std::to_string(p.pf_fresh) +
           " stale_served=" + std::to_string(p.pf_stale) +
           " rejected_freshness=" + std::to_string(p.pf_rejected_freshness) +
           " rejected_integrity=" + std::to_string(p.pf_rejected_integrity) +
           " eviction_flushes=" + std::to_string(p.pf_eviction_flushes) + "\n";
    out += "virtq  cycles=" + std::to_string(p.vq_cycles) +
           " accepted_invalid=" + std::to_string(p.vq_accepted_invalid) +
           " rejected=" + std::to_string(p.vq_rejected) + "\n";
    out += "clock  cycles=" + std::to_string(p.clock_cycles) +
           " armed=" + std::to_string(p.clock_armed) +
           " flagged=" + std::to_string(p.clock_flagged) + "\n";
    out += "\n== findings: " + std::to_string(r.findings.size()) + " ==\n";
    if (r.findings.empty()) out += "none\n";
    for (const Finding& f : r.findings) {
        out += "[" + std::string(to_string(f.severity)) + "] " + to_string(f.category) +
               "  " + f.subsystem + "/" + f.trigger + "\n";
        out += "  first_cycle=" + std::to_string(f.cycle_id) +
               " evidence=" + std::to_string(f.evidence.size()) + " key=" + f.dedup_key() +
               "\n";
        out += "  " + f.description + "\n";
    }
    out += "\n== diagnostics ==\n";
    out += "t_events=" + std::to_string(r.t_event_count) +
           " h_events=" + std::to_string(r.h_event_count) +
           " post_states=" + std::to_string(r.post_count) +
           " annotations=" + std::to_string(r.annotation_count) +
           " orphans=" + std::to_string(r.orphans.size()) + "\n";
    out += "completeness_violations=" + std::to_string(r.completeness_violations) + "\n";
    out += "census_imbalances=" + std::to_string(r.census_imbalances) + "\n";
    out += "classification_conflicts=" + std::to_string(r.classification_conflicts) + "\n";
    out += "missing_post_states=" + std::to_string(r.missing_posts) + "\n";
    for (const std::string& d : r.diagnostics) out += "note: " + d + "\n";
    return out;
}

} // namespace tbk
