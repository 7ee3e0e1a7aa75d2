#include "confex/pipeline.hpp"

#include <chrono>
#include <ctime>

#include "confex/csv.hpp"
#include "confex/error.hpp"
#include "confex/text.hpp"

namespace confex {

using ojson = nlohmann::ordered_json;

double Profile::total() const {
    double t = 0.0;
    for (const auto& s : stages_) t += s.seconds;
    return t;
}

ojson Profile::to_json() const {
    ojson stages = ojson::array();
    for (const auto& s : stages_) stages.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
    return {{"stages", stages}, {"total_seconds", total()}};
}

namespace {

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

ExplainRun run_explain(const Table& table, const QuerySpec& query, const ExplainSettings& settings) {
    settings.prune.validate();
    settings.mcimr.validate();
    query.validate(table);

    ExplainRun run;
    run.query = query;
    Stopwatch clock;

    run.groups = group_aggregate(table, query);
    run.profile.add("group_aggregate", clock.lap());

    run.candidates = settings.candidates ? *settings.candidates : default_candidates(table, query);
    std::vector<std::string> pool = run.candidates;
    if (settings.run_prune) {
        run.prune = prune_offline(table, pool, settings.prune);
        run.profile.add("prune_offline", clock.lap());
        run.prune.chain(prune_online(table, run.prune.kept, query, settings.prune));
        run.profile.add("prune_online", clock.lap());
        pool = run.prune.kept;
    } else {
        run.prune.kept = pool;
    }

    run.explanation = run_mcimr(table, query, pool, settings.mcimr);
    run.profile.add("mcimr", clock.lap());
    return run;
}

Table join_all(Table base, const std::vector<AttributeTable>& attrs, const CsvOptions& typing) {
    for (const auto& a : attrs) base = join_attributes(base, a, a.key_column, typing);
    return base;
}

std::string input_hash(const std::vector<std::string>& paths) {
    std::uint64_t h = text::fnv1a64("");
    for (const auto& p : paths) {
        h = text::fnv1a64(csv::read_file(p), h);
        h = text::fnv1a64(std::string_view("\0", 1), h);
    }
    return text::hex64(h);
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ojson to_json(const QuerySpec& query, const Table& table) {
    return ojson::parse(query_to_json(query, table));
}

ojson to_json(const std::vector<GroupRow>& groups) {
    ojson out = ojson::array();
    for (const auto& g : groups)
        out.push_back({{"exposure", g.exposure_label}, {"value", g.value}, {"count", g.count}});
    return out;
}

ojson to_json(const PruneReport& report) {
    ojson dropped = ojson::array();
    for (const auto& d : report.dropped)
        dropped.push_back({{"column", d.column}, {"rule", to_string(d.rule)}, {"value", d.value}});
    return {{"dropped", dropped}, {"kept", report.kept}};
}

namespace {

ojson ci_json(const CiResult& r) {
    ojson out = {{"cmi", r.cmi}, {"verdict", to_string(r.verdict)}};
    if (r.p_value) out["p_value"] = *r.p_value;
    return out;
}

ojson weight_json(const WeightSummary& w) {
    return {{"min", w.min},         {"max", w.max},         {"mean", w.mean},          {"sum", w.sum},
            {"nonzero", w.nonzero}, {"clipped", w.clipped}, {"converged", w.converged}};
}

}  // namespace

ojson to_json(const std::vector<AttributeMissingness>& missing) {
    ojson out = ojson::array();
    for (const auto& m : missing) {
        ojson tests = ojson::array();
        for (const auto& t : m.report.tests) tests.push_back({{"condition", t.condition}, {"test", ci_json(t.result)}});
        ojson entry = {{"attribute", m.attribute},
                       {"partner", m.partner.empty() ? ojson(nullptr) : ojson(m.partner)},
                       {"kind", m.report.kind == RecoverabilityKind::cmi_query ? "cmi" : "pairwise"},
                       {"recoverable", m.report.recoverable},
                       {"tests", tests},
                       {"weights", m.weights ? weight_json(*m.weights) : ojson(nullptr)}};
        out.push_back(std::move(entry));
    }
    return out;
}

ojson to_json(const Explanation& e) {
    ojson trace = ojson::array();
    for (const auto& s : e.trace) {
        ojson step = {{"chosen", s.chosen},
                      {"criterion", s.criterion},
                      {"cmi", s.cmi},
                      {"redundancy", s.redundancy},
                      {"candidates_examined", s.candidates_examined},
                      {"stop_test", ci_json(s.stop_test)},
                      {"accepted", s.accepted}};
        step["explainability"] = s.accepted ? ojson(s.explainability) : ojson(nullptr);
        trace.push_back(std::move(step));
    }
    ojson resp = nullptr;
    if (e.responsibility.defined) {
        resp = ojson::object();
        for (const auto& name : e.selected) resp[name] = e.responsibility.values.at(name);
    }
    ojson loo = ojson::object();
    for (const auto& name : e.selected) {
        if (auto it = e.leave_one_out.find(name); it != e.leave_one_out.end()) loo[name] = it->second;
    }
    return {{"selected", e.selected},
            {"explainability_before", e.baseline},
            {"explainability_after", e.explainability},
            {"responsibilities", resp},
            {"responsibility_diagnostic", e.responsibility.diagnostic},
            {"leave_one_out", loo},
            {"candidates_examined", e.candidates_examined()},
            {"unusable", e.unusable},
            {"trace", trace}};
}

ojson to_json(const SubgroupResult& result, const Table& table, std::size_t context_size) {
    ojson groups = ojson::array();
    for (const auto& g : result.groups) {
        ojson preds = ojson::array();
        for (std::size_t i = context_size; i < g.predicates.size(); ++i) {
            const auto& p = g.predicates[i];
            preds.push_back({{"attr", p.column}, {"value", table.column(p.column).label(p.code)}});
        }
        groups.push_back({{"refinement", preds}, {"size", g.size}, {"score", g.score}});
    }
    return {{"tau", result.tau},
            {"groups", groups},
            {"stats", {{"generated", result.stats.generated}, {"scored", result.stats.scored}}}};
}

ojson to_json(const ExplainSettings& s) {
    const auto& ci = s.mcimr.ci_config;
    return {{"k", s.mcimr.k},
            {"epsilon", ci.epsilon},
            {"permutations", ci.permutations},
            {"alpha", ci.alpha},
            {"seed", ci.seed},
            {"threads", s.mcimr.threads},
            {"stop_on_independence", s.mcimr.stop_on_independence},
            {"missing_data", s.mcimr.missing.enabled},
            {"prune",
             {{"enabled", s.run_prune},
              {"max_missing_frac", s.prune.max_missing_frac},
              {"high_entropy_frac", s.prune.high_entropy_frac},
              {"fd_epsilon", s.prune.fd_epsilon}}}};
}

}  // namespace confex
