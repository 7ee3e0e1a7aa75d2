#include "confex/prune.hpp"

#include <algorithm>
#include <optional>

#include "confex/error.hpp"
#include "confex/parallel.hpp"

namespace confex {

const char* to_string(PruneRule rule) {
    switch (rule) {
        case PruneRule::constant: return "constant";
        case PruneRule::too_missing: return "too-missing";
        case PruneRule::high_entropy: return "high-entropy";
        case PruneRule::logical_dep_T: return "logical-dep-T";
        case PruneRule::logical_dep_O: return "logical-dep-O";
        case PruneRule::low_relevance: return "low-relevance";
    }
    return "unknown";
}

void PruneConfig::validate() const {
    auto fraction = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!fraction(max_missing_frac) || !fraction(high_entropy_frac))
        throw Error(ErrorKind::validation, "prune", "prune fractions must lie in (0, 1]");
    if (!(fd_epsilon >= 0.0)) throw Error(ErrorKind::validation, "prune", "fd_epsilon must be non-negative");
    ci_config.validate();
}

bool PruneReport::was_dropped(std::string_view column) const {
    return std::any_of(dropped.begin(), dropped.end(), [&](const PrunedColumn& d) { return d.column == column; });
}

void PruneReport::chain(const PruneReport& later) {
    dropped.insert(dropped.end(), later.dropped.begin(), later.dropped.end());
    kept = later.kept;
}

namespace {

std::size_t observed_distinct(const Column& c) {
    std::vector<bool> seen(c.cardinality(), false);
    std::size_t distinct = 0;
    for (std::size_t r = 0; r < c.size(); ++r) {
        if (auto code = c.code(r); code && !seen[*code]) {
            seen[*code] = true;
            ++distinct;
        }
    }
    return distinct;
}

PruneReport assemble(std::span<const std::string> candidates, std::vector<std::optional<PrunedColumn>>& verdicts) {
    PruneReport report;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (verdicts[i]) report.dropped.push_back(std::move(*verdicts[i]));
        else report.kept.push_back(candidates[i]);
    }
    return report;
}

}  // namespace

PruneReport prune_offline(const Table& table, std::span<const std::string> candidates, const PruneConfig& config) {
    config.validate();
    std::vector<std::optional<PrunedColumn>> verdicts(candidates.size());
    parallel_for(candidates.size(), config.threads, [&](std::size_t i) {
        const Column& c = table.column(candidates[i]);
        const double rows = static_cast<double>(table.row_count());
        const double missing = rows > 0 ? static_cast<double>(c.missing_count()) / rows : 1.0;
        if (c.observed_count() == 0 || missing > config.max_missing_frac) {
            verdicts[i] = PrunedColumn{c.name(), PruneRule::too_missing, missing};
            return;
        }
        const std::size_t distinct = observed_distinct(c);
        if (distinct <= 1) {
            verdicts[i] = PrunedColumn{c.name(), PruneRule::constant, static_cast<double>(distinct)};
            return;
        }
        // Binned columns are judged by their pre-binning values so numeric ids are still caught.
        const std::size_t source = c.kind() == ColumnKind::binned_numeric ? std::max(distinct, c.source_distinct())
                                                                          : distinct;
        const double observed = static_cast<double>(c.observed_count());
        if (static_cast<double>(source) > config.high_entropy_frac * observed)
            verdicts[i] = PrunedColumn{c.name(), PruneRule::high_entropy, static_cast<double>(source) / observed};
    });
    return assemble(candidates, verdicts);
}

PruneReport prune_online(const Table& table, std::span<const std::string> candidates, const QuerySpec& query,
                         const PruneConfig& config) {
    config.validate();
    query.validate(table);
    const RowSelection rows = query_rows(table, query);
    if (rows.empty()) throw Error(ErrorKind::estimation, "prune", "empty context selection");

    const Column& o = table.column(query.outcome);
    const Column& t = table.column(query.exposure);
    const auto context = column_refs(table, query.context_columns());
    auto with_t = context;
    with_t.push_back(&t);

    std::vector<std::optional<PrunedColumn>> verdicts(candidates.size());
    parallel_for(candidates.size(), config.threads, [&](std::size_t i) {
        const Column& e = table.column(candidates[i]);
        if (&e == &o || &e == &t)
            throw Error(ErrorKind::validation, "prune", "candidate '" + e.name() + "' is the outcome or exposure");
        const bool observed = std::any_of(rows.rows().begin(), rows.rows().end(),
                                          [&](std::uint32_t r) { return !e.is_missing(r); });
        if (!observed) {
            verdicts[i] = PrunedColumn{e.name(), PruneRule::too_missing, 1.0};
            return;
        }
        const Column* given_e[] = {&e};
        for (auto [target, rule] : {std::pair{&t, PruneRule::logical_dep_T}, std::pair{&o, PruneRule::logical_dep_O}}) {
            const Column* given_target[] = {target};
            const double forward = conditional_entropy(*target, given_e, rows.rows());
            const double backward = conditional_entropy(e, given_target, rows.rows());
            if (forward <= config.fd_epsilon && backward <= config.fd_epsilon) {
                verdicts[i] = PrunedColumn{e.name(), rule, std::max(forward, backward)};
                return;
            }
        }
        const CiResult alone = ci_test(o, e, context, rows.rows(), {}, config.ci_config);
        if (!alone.independent()) return;
        const CiResult given_t = ci_test(o, e, with_t, rows.rows(), {}, config.ci_config);
        if (given_t.independent())
            verdicts[i] = PrunedColumn{e.name(), PruneRule::low_relevance, std::max(alone.cmi, given_t.cmi)};
    });
    return assemble(candidates, verdicts);
}

std::vector<std::string> default_candidates(const Table& table, const QuerySpec& query) {
    const auto context = query.context_columns();
    std::vector<std::string> out;
    for (const auto& c : table.columns()) {
        const auto& n = c.name();
        if (n == query.outcome || n == query.exposure) continue;
        if (std::find(context.begin(), context.end(), n) != context.end()) continue;
        out.push_back(n);
    }
    return out;
}

}  // namespace confex
