#include "confex/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "confex/acquire.hpp"
#include "confex/csv.hpp"
#include "confex/error.hpp"
#include "confex/pipeline.hpp"
#include "confex/text.hpp"

namespace confex {

namespace {

using ojson = nlohmann::ordered_json;

struct Common {
    std::string data;
    std::vector<std::string> attrs;
    std::string query;
    std::string out;
    std::size_t bins = 10;
    std::size_t threads = 1;
    std::string log_level = "warn";
};

struct ExplainArgs {
    std::size_t k = 5;
    double epsilon = 0.01;
    std::size_t permutations = 0;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    bool no_prune = false;
    bool no_missing = false;
    bool profile = false;
};

struct SubgroupArgs {
    std::string explanation;
    std::size_t k = 5;
    std::optional<double> tau;
    std::size_t min_size = 30;
    std::vector<std::string> refine;
};

struct AcquireArgs {
    std::string key_column;
    std::string alias_file;
    std::string endpoint;
    int hops = 1;
    std::string cache;
    std::string agg_spec;
    std::string resource_prefix = "http://dbpedia.org/resource/";
    bool offline = false;
    double timeout = 10.0;
    std::size_t in_flight = 4;
};

struct PruneArgs {
    double epsilon = 0.01;
    double max_missing = 0.9;
    double high_entropy = 0.9;
    double fd_epsilon = 0.05;
};

class Log {
public:
    Log(std::ostream& err, const std::string& level) : err_(err), info_(level == "info") {}
    void info(const std::string& msg) const {
        if (info_) err_ << "[confex] " << msg << '\n';
    }

private:
    std::ostream& err_;
    bool info_;
};

void emit(const ojson& doc, const std::string& path, std::ostream& out) {
    const std::string text = doc.dump(2) + "\n";
    if (path.empty()) {
        out << text;
        return;
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorKind::io, "cli", "cannot write " + path);
    file << text;
    if (!file.flush()) throw Error(ErrorKind::io, "cli", "write failed: " + path);
}

ojson tool_json() { return {{"name", kToolName}, {"version", kToolVersion}}; }

std::vector<std::string> hashed_inputs(const Common& c) {
    std::vector<std::string> paths{c.data};
    paths.insert(paths.end(), c.attrs.begin(), c.attrs.end());
    if (!c.query.empty()) paths.push_back(c.query);
    return paths;
}

ojson inputs_json(const Common& c) {
    return {{"data", c.data}, {"attrs", c.attrs}, {"query", c.query.empty() ? ojson(nullptr) : ojson(c.query)}};
}

struct Loaded {
    Table table;
    std::optional<QuerySpec> query;
    Profile profile;
};

Loaded load(const Common& c, const Log& log) {
    Loaded l;
    auto start = std::chrono::steady_clock::now();
    auto lap = [&](const char* stage) {
        const auto now = std::chrono::steady_clock::now();
        l.profile.add(stage, std::chrono::duration<double>(now - start).count());
        start = now;
    };
    CsvOptions options;
    options.default_bins = c.bins;
    log.info("reading " + c.data);
    l.table = ingest_csv(c.data, options);
    lap("ingest");
    std::vector<AttributeTable> attrs;
    for (const auto& p : c.attrs) {
        log.info("joining attributes from " + p);
        attrs.push_back(read_attribute_table(p));
    }
    l.table = join_all(std::move(l.table), attrs, options);
    lap("acquire_join");
    if (!c.query.empty()) l.query = parse_query_json(csv::read_file(c.query), l.table);
    return l;
}

int cmd_explain(const Common& c, const ExplainArgs& a, std::ostream& out, const Log& log) {
    ExplainSettings s;
    s.mcimr.k = a.k;
    s.mcimr.ci_config.epsilon = a.epsilon;
    s.mcimr.ci_config.permutations = a.permutations;
    s.mcimr.ci_config.alpha = a.alpha;
    s.mcimr.ci_config.seed = a.seed;
    s.mcimr.threads = c.threads;
    s.mcimr.missing.enabled = !a.no_missing;
    s.prune.ci_config = s.mcimr.ci_config;
    s.prune.threads = c.threads;
    s.run_prune = !a.no_prune;
    s.mcimr.validate();
    s.prune.validate();

    Loaded l = load(c, log);
    log.info("explaining " + l.query->outcome + " by " + l.query->exposure);
    ExplainRun run = run_explain(l.table, *l.query, s);

    ojson report;
    report["tool"] = tool_json();
    report["seed"] = a.seed;
    report["timestamp"] = utc_timestamp();
    report["input_hash"] = input_hash(hashed_inputs(c));
    report["inputs"] = inputs_json(c);
    report["config"] = to_json(s);
    report["query"] = to_json(run.query, l.table);
    report["group_aggregate"] = to_json(run.groups);
    report["prune"] = to_json(run.prune);
    report["explanation"] = to_json(run.explanation);
    report["missing"] = {{"weighted_attributes", run.explanation.weighted_attrs},
                         {"attributes", to_json(run.explanation.missing)}};
    if (a.profile) {
        Profile p = l.profile;
        for (const auto& st : run.profile.stages()) p.add(st.stage, st.seconds);
        report["profile"] = p.to_json();
    }
    emit(report, c.out, out);
    return 0;
}

int cmd_subgroups(const Common& c, const SubgroupArgs& a, std::ostream& out, const Log& log) {
    SubgroupConfig cfg;
    cfg.k = a.k;
    cfg.tau = a.tau;
    cfg.min_size = a.min_size;
    cfg.refinable = a.refine;
    cfg.validate();

    ojson prior;
    try {
        prior = ojson::parse(csv::read_file(a.explanation));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, "cli", std::string("explanation report is not valid JSON: ") + e.what());
    }
    const std::string hash = input_hash(hashed_inputs(c));
    if (!prior.contains("input_hash") || prior["input_hash"] != hash)
        throw Error(ErrorKind::validation, "cli",
                    "explanation report was computed from different inputs (hash mismatch)");

    Loaded l = load(c, log);
    Explanation e;
    try {
        e.selected = prior.at("explanation").at("selected").get<std::vector<std::string>>();
        e.baseline = prior.at("explanation").at("explainability_before").get<double>();
        e.explainability = prior.at("explanation").at("explainability_after").get<double>();
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::parse, "cli", std::string("malformed explanation report: ") + ex.what());
    }
    for (const auto& s : e.selected) {
        if (!l.table.has_column(s))
            throw Error(ErrorKind::validation, "cli", "explanation attribute '" + s + "' not in the data");
    }
    if (cfg.refinable.empty()) {
        // Columns the explain run rejected offline (ids, near-constant, mostly missing) make no useful groups.
        std::vector<std::string> rejected;
        if (prior.contains("prune") && prior["prune"].contains("dropped")) {
            for (const auto& d : prior["prune"]["dropped"]) {
                const auto rule = d.value("rule", std::string{});
                if (rule == "high-entropy" || rule == "constant" || rule == "too-missing")
                    rejected.push_back(d.value("column", std::string{}));
            }
        }
        for (auto& name : default_refinable(l.table, *l.query, e.selected)) {
            if (std::find(rejected.begin(), rejected.end(), name) == rejected.end()) cfg.refinable.push_back(name);
        }
    }
    log.info("searching " + std::to_string(cfg.refinable.size()) + " refinable columns");
    const auto result = top_k_unexplained(l.table, *l.query, e, cfg);

    ojson report;
    report["tool"] = tool_json();
    report["timestamp"] = utc_timestamp();
    report["input_hash"] = hash;
    report["inputs"] = inputs_json(c);
    report["query"] = to_json(*l.query, l.table);
    report["explanation"] = {{"selected", e.selected},
                             {"explainability_before", e.baseline},
                             {"explainability_after", e.explainability}};
    report["config"] = {{"k", cfg.k}, {"tau", result.tau}, {"min_size", cfg.min_size}, {"refinable", cfg.refinable}};
    report["subgroups"] = to_json(result, l.table, l.query->context.size());
    emit(report, c.out, out);
    return 0;
}

int cmd_acquire(const Common& c, const AcquireArgs& a, std::ostream& out, const Log& log) {
    if (a.endpoint.empty() && !a.offline)
        throw Error(ErrorKind::validation, "cli", "--endpoint is required unless --offline is set");
    if (c.out.empty()) throw Error(ErrorKind::validation, "cli", "--out is required");
    AggSpec spec;
    if (!a.agg_spec.empty()) {
        const auto trimmed = text::trim(a.agg_spec);
        spec = AggSpec::from_json(!trimmed.empty() && trimmed.front() == '{' ? a.agg_spec : csv::read_file(a.agg_spec));
    }
    CsvOptions options;
    options.default_bins = c.bins;
    options.hints[a.key_column].kind = ColumnKind::categorical;
    const Table table = ingest_csv(c.data, options);
    const Column& key = table.column(a.key_column);
    std::vector<std::string> labels;
    for (std::size_t r = 0; r < table.row_count(); ++r) {
        if (!key.is_missing(r)) labels.push_back(key_text(key, r));
    }
    const auto aliases = a.alias_file.empty() ? std::map<std::string, std::string>{} : read_alias_file(a.alias_file);
    const LinkMap links = build_link_map(labels, aliases, a.resource_prefix);

    KgOptions kg;
    kg.endpoint = a.endpoint;
    kg.hop = a.hops;
    kg.cache_dir = a.cache.empty() ? default_cache_dir() : a.cache;
    kg.offline = a.offline;
    kg.timeout_seconds = a.timeout;
    kg.max_in_flight = a.in_flight;
    log.info("fetching " + std::to_string(links.mapping.size()) + " entities");
    const KgResult fetched = fetch_kg(links, kg);

    AttributeTable attrs = aggregate_multivalue(fetched.triples, spec, a.key_column);
    attrs.provenance = Provenance::kg_endpoint;
    attrs.hop = a.hops;
    write_attribute_table(attrs, c.out);

    ojson diags = ojson::array();
    for (const auto& d : fetched.diagnostics)
        diags.push_back({{"key", d.key}, {"entity", d.entity}, {"hop", d.hop}, {"message", d.message}});
    ojson summary = {{"tool", tool_json()},
                     {"out", c.out},
                     {"entities", links.mapping.size()},
                     {"unmatched", links.unmatched},
                     {"triples", fetched.triples.size()},
                     {"keys", attrs.keys.size()},
                     {"attributes", attrs.attributes.size()},
                     {"requests", fetched.requests},
                     {"cache_hits", fetched.cache_hits},
                     {"diagnostics", diags}};
    emit(summary, "", out);
    return 0;
}

int cmd_prune_report(const Common& c, const PruneArgs& a, std::ostream& out, const Log& log) {
    PruneConfig cfg;
    cfg.max_missing_frac = a.max_missing;
    cfg.high_entropy_frac = a.high_entropy;
    cfg.fd_epsilon = a.fd_epsilon;
    cfg.ci_config.epsilon = a.epsilon;
    cfg.threads = c.threads;
    cfg.validate();

    Loaded l = load(c, log);
    std::vector<std::string> candidates;
    if (l.query) {
        candidates = default_candidates(l.table, *l.query);
    } else {
        candidates = l.table.column_names();
    }
    PruneReport report = prune_offline(l.table, candidates, cfg);
    if (l.query) report.chain(prune_online(l.table, report.kept, *l.query, cfg));

    ojson doc;
    doc["tool"] = tool_json();
    doc["timestamp"] = utc_timestamp();
    doc["input_hash"] = input_hash(hashed_inputs(c));
    doc["inputs"] = inputs_json(c);
    doc["config"] = {{"max_missing_frac", cfg.max_missing_frac},
                     {"high_entropy_frac", cfg.high_entropy_frac},
                     {"fd_epsilon", cfg.fd_epsilon},
                     {"epsilon", cfg.ci_config.epsilon}};
    doc["query"] = l.query ? to_json(*l.query, l.table) : ojson(nullptr);
    doc["prune"] = to_json(report);
    emit(doc, c.out, out);
    return 0;
}

void add_common(CLI::App* sub, Common& c, bool query_required) {
    sub->add_option("--data", c.data, "Input CSV")->required();
    sub->add_option("--attrs", c.attrs, "Attribute-table CSVs to join on their key column");
    auto* q = sub->add_option("--query", c.query, "Query JSON");
    if (query_required) q->required();
    sub->add_option("--out", c.out, "Output path (stdout when omitted)");
    sub->add_option("--bins", c.bins, "Bins for numeric columns")->check(CLI::PositiveNumber);
    sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
    sub->add_option("--log-level", c.log_level, "warn or info")->check(CLI::IsMember({"warn", "info"}));
}

void report_error(std::ostream& err, const std::string& kind, const std::string& module, const std::string& message) {
    ojson doc = {{"error", {{"kind", kind}, {"module", module}, {"message", message}}}};
    err << doc.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Explain correlations in aggregate query results by finding confounding attributes", "confex"};
    app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
    app.require_subcommand(1);

    Common common;
    ExplainArgs ex;
    SubgroupArgs sg;
    AcquireArgs aq;
    PruneArgs pr;

    auto* explain = app.add_subcommand("explain", "Select confounding attributes for a query");
    add_common(explain, common, true);
    explain->add_option("--k", ex.k, "Maximum explanation size");
    explain->add_option("--epsilon", ex.epsilon, "Independence threshold in bits");
    explain->add_option("--permutations", ex.permutations, "Permutations per independence test (0 = threshold only)");
    explain->add_option("--alpha", ex.alpha, "Permutation test significance level");
    explain->add_option("--seed", ex.seed, "Random seed");
    explain->add_flag("--no-prune", ex.no_prune, "Skip candidate pruning");
    explain->add_flag("--no-missing", ex.no_missing, "Use complete cases only");
    explain->add_flag("--profile", ex.profile, "Add per-stage timings to the report");

    auto* subgroups = app.add_subcommand("subgroups", "Find the largest subgroups the explanation leaves unexplained");
    add_common(subgroups, common, true);
    subgroups->add_option("--explanation", sg.explanation, "Report written by explain")->required();
    subgroups->add_option("--k", sg.k, "Number of subgroups");
    subgroups->add_option("--tau", sg.tau, "Score threshold in bits (default 0.1 x baseline)");
    subgroups->add_option("--min-size", sg.min_size, "Minimum rows per subgroup");
    subgroups->add_option("--refine", sg.refine, "Columns that may be refined");

    auto* acquire = app.add_subcommand("acquire", "Fetch entity attributes from a SPARQL endpoint");
    acquire->add_option("--data", common.data, "Input CSV")->required();
    acquire->add_option("--key-column", aq.key_column, "Column whose values name entities")->required();
    acquire->add_option("--alias-file", aq.alias_file, "CSV of label,entity overrides");
    acquire->add_option("--endpoint", aq.endpoint, "SPARQL endpoint URL");
    acquire->add_option("--hops", aq.hops, "1 or 2")->check(CLI::Range(1, 2));
    acquire->add_option("--cache", aq.cache, "Cache directory (default $CONFEX_CACHE_DIR or .confex-cache)");
    acquire->add_option("--agg-spec", aq.agg_spec, "Aggregation JSON, inline or a file path");
    acquire->add_option("--out", common.out, "Attribute-table CSV to write")->required();
    acquire->add_option("--resource-prefix", aq.resource_prefix, "Prefix turning labels into entity IRIs");
    acquire->add_flag("--offline", aq.offline, "Serve from the cache only");
    acquire->add_option("--timeout", aq.timeout, "Per-request timeout in seconds")->check(CLI::PositiveNumber);
    acquire->add_option("--max-in-flight", aq.in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
    acquire->add_option("--bins", common.bins, "Bins for numeric columns")->check(CLI::PositiveNumber);
    acquire->add_option("--log-level", common.log_level, "warn or info")->check(CLI::IsMember({"warn", "info"}));

    auto* prune = app.add_subcommand("prune-report", "Report which candidate columns pruning drops");
    add_common(prune, common, false);
    prune->add_option("--epsilon", pr.epsilon, "Independence threshold in bits");
    prune->add_option("--max-missing", pr.max_missing, "Drop columns missing more than this fraction");
    prune->add_option("--high-entropy", pr.high_entropy, "Drop columns whose distinct ratio exceeds this");
    prune->add_option("--fd-epsilon", pr.fd_epsilon, "Conditional entropy below which a dependency holds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    const Log log(err, common.log_level);
    try {
        if (*explain) return cmd_explain(common, ex, out, log);
        if (*subgroups) return cmd_subgroups(common, sg, out, log);
        if (*acquire) return cmd_acquire(common, aq, out, log);
        if (*prune) return cmd_prune_report(common, pr, out, log);
    } catch (const Error& e) {
        report_error(err, to_string(e.kind()), e.module(), e.what());
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        report_error(err, "io", "cli", e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error(err, "internal", "cli", e.what());
        return 1;
    }
    return 2;
}

}  // namespace confex
