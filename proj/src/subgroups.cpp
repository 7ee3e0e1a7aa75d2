#include "confex/subgroups.hpp"

#include <algorithm>
#include <set>

#include "confex/error.hpp"

namespace confex {

void SubgroupConfig::validate() const {
    if (k < 1) throw Error(ErrorKind::validation, "subgroups", "k must be at least 1");
    if (tau && !(*tau >= 0.0)) throw Error(ErrorKind::validation, "subgroups", "tau must be non-negative");
    std::set<std::string> seen;
    for (const auto& c : refinable) {
        if (!seen.insert(c).second)
            throw Error(ErrorKind::validation, "subgroups", "duplicate refinable column '" + c + "'");
    }
}

Refinement root_refinement(const Table& table, const QuerySpec& query) {
    Refinement root;
    root.predicates = query.context;
    const RowSelection sel = select_context(table, query.context);
    root.rows.assign(sel.rows().begin(), sel.rows().end());
    root.size = root.rows.size();
    return root;
}

std::vector<Refinement> gen_children(const Table& table, const Refinement& node, const SubgroupConfig& config) {
    std::vector<Refinement> out;
    for (std::size_t j = static_cast<std::size_t>(node.frontier_index + 1); j < config.refinable.size(); ++j) {
        const Column& col = table.column(config.refinable[j]);
        std::vector<std::vector<std::uint32_t>> buckets(col.cardinality());
        for (auto r : node.rows) {
            if (auto code = col.code(r)) buckets[*code].push_back(r);
        }
        for (std::uint32_t v = 0; v < buckets.size(); ++v) {
            if (buckets[v].empty() || buckets[v].size() < config.min_size) continue;
            Refinement child;
            child.predicates = node.predicates;
            child.predicates.push_back({col.name(), v});
            child.added = node.added + 1;
            child.size = buckets[v].size();
            child.frontier_index = static_cast<int>(j);
            child.rows = std::move(buckets[v]);
            out.push_back(std::move(child));
        }
    }
    return out;
}

double refinement_score(const Table& table, const QuerySpec& query, const Refinement& node,
                        std::span<const std::string> explanation) {
    const Column& o = table.column(query.outcome);
    const Column& t = table.column(query.exposure);
    std::vector<std::uint32_t> rows;
    for (auto r : node.rows) {
        if (!o.is_missing(r) && !t.is_missing(r)) rows.push_back(r);
    }
    if (rows.empty()) return 0.0;
    const auto z = column_refs(table, explanation);
    try {
        return cmi(o, t, z, rows);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::estimation) return 0.0;
        throw;
    }
}

bool pops_before(const Refinement& a, const Refinement& b) {
    if (a.size != b.size) return a.size > b.size;
    if (a.added != b.added) return a.added < b.added;
    return a.predicates < b.predicates;
}

namespace {

bool is_ancestor(const Refinement& a, const Refinement& b) {
    if (a.added >= b.added) return false;
    return std::all_of(a.predicates.begin(), a.predicates.end(), [&](const Predicate& p) {
        return std::find(b.predicates.begin(), b.predicates.end(), p) != b.predicates.end();
    });
}

}  // namespace

SubgroupResult top_k_unexplained(const Table& table, const QuerySpec& query, const Explanation& explanation,
                                 const SubgroupConfig& config, RefinementScorer scorer) {
    config.validate();
    query.validate(table);
    const auto context = query.context_columns();
    for (const auto& c : config.refinable) {
        if (!table.has_column(c))
            throw Error(ErrorKind::validation, "subgroups", "unknown refinable column '" + c + "'");
        if (c == query.outcome || c == query.exposure ||
            std::find(context.begin(), context.end(), c) != context.end())
            throw Error(ErrorKind::validation, "subgroups", "refinable column '" + c + "' is part of the query");
    }
    if (!scorer) {
        scorer = [&](const Refinement& r) { return refinement_score(table, query, r, explanation.selected); };
    }

    SubgroupResult result;
    result.tau = config.tau ? *config.tau : 0.1 * explanation.baseline;

    auto heap_less = [](const Refinement& a, const Refinement& b) { return pops_before(b, a); };
    std::vector<Refinement> heap = gen_children(table, root_refinement(table, query), config);
    result.stats.generated = heap.size();
    std::make_heap(heap.begin(), heap.end(), heap_less);

    std::set<std::vector<Predicate>> scored;
    std::vector<Refinement> accepted;
    while (!heap.empty() && accepted.size() < config.k) {
        std::pop_heap(heap.begin(), heap.end(), heap_less);
        Refinement node = std::move(heap.back());
        heap.pop_back();
        result.stats.popped_sizes.push_back(node.size);

        // Descendants of an accepted group are dominated by it.
        if (std::any_of(accepted.begin(), accepted.end(), [&](const Refinement& a) { return is_ancestor(a, node); }))
            continue;

        auto key = node.predicates;
        std::sort(key.begin(), key.end());
        if (!scored.insert(std::move(key)).second) ++result.stats.rescored;
        ++result.stats.scored;
        node.score = scorer(node);

        if (node.score > result.tau) {
            accepted.push_back(std::move(node));
            continue;
        }
        auto children = gen_children(table, node, config);
        result.stats.generated += children.size();
        for (auto& c : children) {
            heap.push_back(std::move(c));
            std::push_heap(heap.begin(), heap.end(), heap_less);
        }
    }

    std::sort(accepted.begin(), accepted.end(), [](const Refinement& a, const Refinement& b) {
        if (a.size != b.size) return a.size > b.size;
        return a.predicates < b.predicates;
    });
    result.groups = std::move(accepted);
    return result;
}

std::vector<std::string> default_refinable(const Table& table, const QuerySpec& query,
                                           std::span<const std::string> explanation, std::uint32_t max_cardinality) {
    const auto context = query.context_columns();
    std::vector<std::string> out;
    for (const auto& c : table.columns()) {
        const auto& n = c.name();
        if (n == query.outcome || n == query.exposure) continue;
        if (std::find(context.begin(), context.end(), n) != context.end()) continue;
        if (std::find(explanation.begin(), explanation.end(), n) != explanation.end()) continue;
        if (c.cardinality() < 2 || c.cardinality() > max_cardinality) continue;
        out.push_back(n);
    }
    return out;
}

}  // namespace confex
