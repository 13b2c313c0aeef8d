#pragma once
// JSONL encoding of log records. Field names and order are part of the
// artifact format; ordered_json keeps emission deterministic.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <sodium.h>

#include <nlohmann/json.hpp>

#include "tbk/types.hpp"

namespace tbk {

using ojson = nlohmann::ordered_json;

inline std::string b64_encode(const std::vector<uint8_t>& bin) {
    std::string out(sodium_base64_ENCODED_LEN(bin.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
    sodium_bin2base64(out.data(), out.size(), bin.data(), bin.size(),
                      sodium_base64_VARIANT_ORIGINAL);
    out.resize(std::char_traits<char>::length(out.c_str()));
    return out;
}

inline std::vector<uint8_t> b64_decode(const std::string& s) {
    std::vector<uint8_t> out(s.size()); // decoded is always shorter
    size_t got = 0;
    if (sodium_base642bin(out.data(), out.size(), s.data(), s.size(), nullptr, &got,
                          nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
        throw Error("bad base64 in log record");
    out.resize(got);
    return out;
}

// ---------------------------------------------------------------------------
// ValueTree <-> JSON. Kinds: {"i":<int>} {"b":"<base64>"} {"n":true}
// {"r":{name:tree,...}}; "t":true marks a truncated capture.

inline ojson to_json(const ValueTree& v) {
    ojson j;
    switch (v.kind()) {
    case ValueTree::Kind::Int: j["i"] = v.as_int(); break;
    case ValueTree::Kind::Bytes: j["b"] = b64_encode(v.as_bytes()); break;
    case ValueTree::Kind::Null: j["n"] = true; break;
    case ValueTree::Kind::Rec: {
        ojson r = ojson::object();
        for (const auto& [name, sub] : v.fields()) r[name] = to_json(sub);
        j["r"] = std::move(r);
        break;
    }
    }
    if (v.truncated()) j["t"] = true;
    return j;
}

inline ValueTree value_tree_from_json(const ojson& j) {
    ValueTree v;
    if (j.contains("i")) {
        v = ValueTree::of_int(j.at("i").get<int64_t>());
    } else if (j.contains("b")) {
        auto bytes = b64_decode(j.at("b").get<std::string>());
        v = ValueTree::of_bytes(bytes.data(), bytes.size(), bytes.size());
    } else if (j.contains("r")) {
        std::vector<ValueTree::Field> fields;
        for (auto it = j.at("r").begin(); it != j.at("r").end(); ++it)
            fields.emplace_back(it.key(), value_tree_from_json(it.value()));
        v = ValueTree::rec(std::move(fields));
    } else if (j.contains("n")) {
        v = ValueTree::null();
    } else {
        throw Error("value tree record with no kind marker");
    }
    if (j.value("t", false)) v.set_truncated(true);
    return v;
}

// ---------------------------------------------------------------------------
// BoundaryEvent

inline ojson to_json(const BoundaryEvent& e) {
    ojson j;
    j["side"] = to_string(e.side);
    j["cycle_id"] = e.cycle_id;
    j["seq"] = e.seq;
    j["group_id"] = e.group_id;
    j["syscall"] = e.syscall;
    j["args"] = to_json(e.args);
    if (e.ret) j["ret"] = *e.ret;
    j["mono_ts"] = e.mono_ts;
    return j;
}

inline BoundaryEvent event_from_json(const ojson& j) {
    BoundaryEvent e;
    e.side = side_from_string(j.at("side").get<std::string>());
    e.cycle_id = j.at("cycle_id").get<int64_t>();
    e.seq = j.at("seq").get<int64_t>();
    e.group_id = j.at("group_id").get<std::string>();
    e.syscall = j.at("syscall").get<int64_t>();
    e.args = value_tree_from_json(j.at("args"));
    if (j.contains("ret")) e.ret = j.at("ret").get<int64_t>();
    e.mono_ts = j.at("mono_ts").get<uint64_t>();
    return e;
}

// ---------------------------------------------------------------------------
// MutationRule / Annotation

inline ojson to_json(const MutationRule& r) {
    return ojson{{"target", to_string(r.target)},
                 {"strategy", to_string(r.strategy)},
                 {"seed", r.seed},
                 {"applicability", r.applicability}};
}

inline MutationRule mutation_rule_from_json(const ojson& j) {
    MutationRule r;
    auto t = mutation_target_from_string(j.at("target").get<std::string>());
    auto s = mutation_strategy_from_string(j.at("strategy").get<std::string>());
    if (!t || !s) throw Error("bad mutation rule: " + j.dump(), kExitUsage);
    r.target = *t;
    r.strategy = *s;
    r.seed = j.at("seed").get<uint64_t>();
    r.applicability = j.at("applicability").get<std::string>();
    return r;
}

inline ojson to_json(const Annotation& a) {
    ojson j;
    j["type"] = "annotation";
    j["cycle_id"] = a.cycle_id;
    j["seq"] = a.seq;
    j["rule"] = to_json(a.rule);
    j["original"] = a.original;
    j["injected"] = a.injected;
    j["note"] = a.note;
    return j;
}

inline Annotation annotation_from_json(const ojson& j) {
    Annotation a;
    a.cycle_id = j.at("cycle_id").get<int64_t>();
    a.seq = j.at("seq").get<int64_t>();
    a.rule = mutation_rule_from_json(j.at("rule"));
    a.original = j.at("original").get<int64_t>();
    a.injected = j.at("injected").get<int64_t>();
    a.note = j.value("note", "");
    return a;
}

// ---------------------------------------------------------------------------
// PostState

inline ojson to_json(const Census& c) {
    return ojson{{"fds", c.fds}, {"mappings", c.mappings}, {"threads", c.threads}};
}

inline Census census_from_json(const ojson& j) {
    return Census{j.at("fds").get<int64_t>(), j.at("mappings").get<int64_t>(),
                  j.at("threads").get<int64_t>()};
}

inline ojson to_json(const PostState& p) {
    ojson j;
    j["type"] = "post_state";
    j["cycle_id"] = p.cycle_id;
    j["census"] = to_json(p.census);
    if (p.map) {
        j["map"] = ojson{{"requested_len", p.map->requested_len},
                         {"file_len", p.map->file_len},
                         {"fill_count", p.map->fill_count},
                         {"tail_sample", b64_encode(p.map->tail_sample)}};
    }
    if (p.shm) {
        j["shm"] = ojson{{"requested", p.shm->requested},
                         {"granted", p.shm->granted},
                         {"reported", p.shm->reported}};
    }
    if (p.remap) {
        j["remap"] = ojson{{"old_size", p.remap->old_size},
                           {"requested_new", p.remap->requested_new},
                           {"accounted", p.remap->accounted}};
    }
    if (p.epoll) {
        ojson e{{"requested_depth", p.epoll->requested_depth},
                {"accepted_depth", p.epoll->accepted_depth},
                {"limit", p.epoll->limit},
                {"cycle_accepted", p.epoll->cycle_accepted},
                {"watchdog_ms", p.epoll->watchdog_ms}};
        if (p.epoll->wait_result) e["wait_result"] = to_string(*p.epoll->wait_result);
        j["epoll"] = std::move(e);
    }
    if (p.clock) {
        j["clock"] = ojson{{"res_ns", p.clock->res_ns},
                           {"documented_res_ns", p.clock->documented_res_ns},
                           {"deltas_ns", p.clock->deltas_ns},
                           {"trusted_elapsed_ns", p.clock->trusted_elapsed_ns},
                           {"drift_ns", p.clock->drift_ns}};
    }
    if (p.pf) {
        j["pf"] = ojson{{"outcome", to_string(p.pf->outcome)},
                        {"flushes", p.pf->flushes},
                        {"blocks_written", p.pf->blocks_written}};
    }
    if (p.virtq) {
        j["virtq"] = ojson{{"accepted", p.virtq->accepted},
                           {"used_len", p.virtq->used_len},
                           {"posted_len", p.virtq->posted_len},
                           {"detail", p.virtq->detail}};
    }
    return j;
}

inline PostState post_state_from_json(const ojson& j) {
    PostState p;
    p.cycle_id = j.at("cycle_id").get<int64_t>();
    p.census = census_from_json(j.at("census"));
    if (j.contains("map")) {
        const auto& m = j.at("map");
        MapObs o;
        o.requested_len = m.at("requested_len").get<int64_t>();
        o.file_len = m.at("file_len").get<int64_t>();
        o.fill_count = m.at("fill_count").get<int64_t>();
        o.tail_sample = b64_decode(m.at("tail_sample").get<std::string>());
        p.map = o;
    }
    if (j.contains("shm")) {
        const auto& m = j.at("shm");
        p.shm = ShmObs{m.at("requested").get<int64_t>(), m.at("granted").get<int64_t>(),
                       m.at("reported").get<int64_t>()};
    }
    if (j.contains("remap")) {
        const auto& m = j.at("remap");
        p.remap = RemapObs{m.at("old_size").get<int64_t>(),
                           m.at("requested_new").get<int64_t>(),
                           m.at("accounted").get<int64_t>()};
    }
    if (j.contains("epoll")) {
        const auto& m = j.at("epoll");
        EpollObs o;
        o.requested_depth = m.at("requested_depth").get<int64_t>();
        o.accepted_depth = m.at("accepted_depth").get<int64_t>();
        o.limit = m.at("limit").get<int64_t>();
        o.cycle_accepted = m.at("cycle_accepted").get<bool>();
        o.watchdog_ms = m.at("watchdog_ms").get<int64_t>();
        if (m.contains("wait_result")) {
            std::string w = m.at("wait_result").get<std::string>();
            if (w == "events") o.wait_result = EpollWaitResult::Events;
            else if (w == "timeout") o.wait_result = EpollWaitResult::Timeout;
            else if (w == "watchdog_deadlock") o.wait_result = EpollWaitResult::WatchdogDeadlock;
            else throw Error("bad wait_result: " + w);
        }
        p.epoll = o;
    }
    if (j.contains("clock")) {
        const auto& m = j.at("clock");
        ClockObs o;
        o.res_ns = m.at("res_ns").get<int64_t>();
        o.documented_res_ns = m.at("documented_res_ns").get<int64_t>();
        o.deltas_ns = m.at("deltas_ns").get<std::vector<int64_t>>();
        o.trusted_elapsed_ns = m.at("trusted_elapsed_ns").get<int64_t>();
        o.drift_ns = m.value("drift_ns", int64_t(0));
        p.clock = o;
    }
    if (j.contains("pf")) {
        const auto& m = j.at("pf");
        PfObs o;
        std::string w = m.at("outcome").get<std::string>();
        if (w == "fresh") o.outcome = PfOutcome::Fresh;
        else if (w == "stale_served") o.outcome = PfOutcome::StaleServed;
        else if (w == "rejected_freshness") o.outcome = PfOutcome::RejectedFreshness;
        else if (w == "rejected_integrity") o.outcome = PfOutcome::RejectedIntegrity;
        else throw Error("bad pf outcome: " + w);
        o.flushes = m.at("flushes").get<int64_t>();
        o.blocks_written = m.at("blocks_written").get<int64_t>();
        p.pf = o;
    }
    if (j.contains("virtq")) {
        const auto& m = j.at("virtq");
        p.virtq = VirtqObs{m.at("accepted").get<bool>(), m.at("used_len").get<int64_t>(),
                           m.at("posted_len").get<int64_t>(), m.at("detail").get<std::string>()};
    }
    return p;
}

// ---------------------------------------------------------------------------
// Finding

inline ojson to_json(const EventRef& r) {
    return ojson{{"side", to_string(r.side)}, {"cycle_id", r.cycle_id}, {"seq", r.seq}};
}

inline EventRef event_ref_from_json(const ojson& j) {
    return EventRef{side_from_string(j.at("side").get<std::string>()),
                    j.at("cycle_id").get<int64_t>(), j.at("seq").get<int64_t>()};
}

inline ojson to_json(const Finding& f) {
    ojson ev = ojson::array();
    for (const auto& r : f.evidence) ev.push_back(to_json(r));
    ojson j;
    j["category"] = to_string(f.category);
    j["cycle_id"] = f.cycle_id;
    j["evidence"] = ojson{{"events", std::move(ev)}, {"description", f.description}};
    j["severity"] = to_string(f.severity);
    j["dedup_key"] = f.dedup_key();
    j["subsystem"] = f.subsystem;
    j["trigger"] = f.trigger;
    return j;
}

inline Finding finding_from_json(const ojson& j) {
    Finding f;
    auto cat = category_from_string(j.at("category").get<std::string>());
    if (!cat) throw Error("bad finding category: " + j.dump());
    f.category = *cat;
    f.severity = severity_of(f.category);
    f.cycle_id = j.at("cycle_id").get<int64_t>();
    f.subsystem = j.at("subsystem").get<std::string>();
    f.trigger = j.at("trigger").get<std::string>();
    f.description = j.at("evidence").at("description").get<std::string>();
    for (const auto& r : j.at("evidence").at("events"))
        f.evidence.push_back(event_ref_from_json(r));
    f.normalize();
    return f;
}

// ---------------------------------------------------------------------------
// JSONL files

class JsonlWriter {
  public:
    JsonlWriter() = default;
    explicit JsonlWriter(const std::string& path, bool append = true) { open(path, append); }

    void open(const std::string& path, bool append = true) {
        out_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out_) throw Error("cannot open log for writing: " + path);
        path_ = path;
    }

    bool is_open() const { return out_.is_open(); }

    // One line per record, flushed immediately: a record is durable (against
    // process crash) once write() returned, which resume relies on.
    void write(const ojson& j) {
        out_ << j.dump() << '\n';
        out_.flush();
        if (!out_) throw Error("write failed: " + path_);
    }

    void close() { out_.close(); }

  private:
    std::ofstream out_;
    std::string path_;
};

inline std::vector<ojson> read_jsonl(const std::string& path, bool ignore_partial = true) {
    std::vector<ojson> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ojson j = ojson::parse(line, nullptr, false);
        if (j.is_discarded()) {
            // A torn trailing line can survive a kill; anything else is corruption.
            if (ignore_partial && in.peek() == EOF) break;
            throw Error("corrupt JSONL line in " + path + ": " + line, kExitProtocol);
        }
        out.push_back(std::move(j));
    }
    return out;
}

// Record kind of a parsed log line: boundary events have a "side" key, other
// records are discriminated by "type".
inline bool is_event_record(const ojson& j) { return j.contains("side"); }
inline bool is_post_state_record(const ojson& j) { return j.value("type", "") == "post_state"; }
inline bool is_annotation_record(const ojson& j) { return j.value("type", "") == "annotation"; }

} // namespace tbk
