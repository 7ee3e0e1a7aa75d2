#include "confex/mcimr.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "confex/error.hpp"
#include "confex/parallel.hpp"

namespace confex {

void McimrConfig::validate() const {
    if (k < 1) throw Error(ErrorKind::validation, "mcimr", "k must be at least 1");
    ci_config.validate();
}

std::size_t Explanation::candidates_examined() const {
    std::size_t total = 0;
    for (const auto& s : trace) total += s.candidates_examined;
    return total;
}

namespace {

// Shared state for one query. Context columns are constant on the query rows,
// so conditioning on them is a no-op and they are left out of every z set.
struct Search {
    const Table& table;
    const Column& o;
    const Column& t;
    RowSelection rows;
    WeightPolicy* policy;

    Search(const Table& tab, const QuerySpec& query, WeightPolicy* p)
        : table(tab), o(tab.column(query.outcome)), t(tab.column(query.exposure)), rows(query_rows(tab, query)),
          policy(p) {
        if (rows.empty()) throw Error(ErrorKind::estimation, "mcimr", "empty context selection");
    }

    bool observed(const Column& e) const {
        return std::any_of(rows.rows().begin(), rows.rows().end(), [&](std::uint32_t r) { return !e.is_missing(r); });
    }

    // I(O;T|C,E), weighted when the missing-data policy asks for it.
    double single(const Column& e, bool* weighted = nullptr) const {
        Weights w = policy ? policy->for_attribute(e.name()) : Weights{};
        if (weighted) *weighted = !w.empty();
        const Column* z[] = {&e};
        return cmi(o, t, z, rows.rows(), w);
    }

    // I(a;b) on the query rows; 0 when the two are never observed together.
    double pair(const Column& a, const Column& b) const {
        const bool overlap = std::any_of(rows.rows().begin(), rows.rows().end(), [&](std::uint32_t r) {
            return !a.is_missing(r) && !b.is_missing(r);
        });
        if (!overlap) return 0.0;
        Weights w = policy ? policy->for_pair(a.name(), b.name()) : Weights{};
        return cmi(a, b, {}, rows.rows(), w);
    }

    double conditioned(std::span<const Column* const> z) const { return cmi(o, t, z, rows.rows()); }
};

std::vector<const Column*> check_candidates(const Table& table, const QuerySpec& query,
                                            std::span<const std::string> candidates) {
    const auto context = query.context_columns();
    std::set<std::string> seen;
    std::vector<const Column*> out;
    for (const auto& name : candidates) {
        if (name == query.outcome || name == query.exposure ||
            std::find(context.begin(), context.end(), name) != context.end())
            throw Error(ErrorKind::validation, "mcimr", "candidate '" + name + "' is part of the query");
        if (!seen.insert(name).second)
            throw Error(ErrorKind::validation, "mcimr", "duplicate candidate '" + name + "'");
        out.push_back(&table.column(name));
    }
    return out;
}

// (value, name) minimum over `pool`.
std::size_t argmin(const std::vector<const Column*>& pool, const std::vector<double>& score) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
        if (score[i] < score[best] || (score[i] == score[best] && pool[i]->name() < pool[best]->name())) best = i;
    }
    return best;
}

}  // namespace

Choice next_best_att(const Table& table, const QuerySpec& query, std::span<const std::string> selected,
                     std::span<const std::string> candidates, WeightPolicy* policy, std::size_t threads) {
    query.validate(table);
    const Search search(table, query, policy);
    const auto chosen = check_candidates(table, query, selected);
    std::vector<const Column*> pool;
    for (const Column* c : check_candidates(table, query, candidates)) {
        if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) pool.push_back(c);
    }
    if (pool.empty()) throw Error(ErrorKind::validation, "mcimr", "empty candidate set");

    std::vector<double> v1(pool.size()), red(pool.size(), 0.0), score(pool.size());
    parallel_for(pool.size(), threads, [&](std::size_t i) {
        v1[i] = search.single(*pool[i]);
        for (const Column* s : chosen) red[i] += search.pair(*pool[i], *s);
        if (!chosen.empty()) red[i] /= static_cast<double>(chosen.size());
        score[i] = v1[i] + red[i];
    });
    const std::size_t b = argmin(pool, score);
    return {pool[b]->name(), score[b], v1[b], red[b]};
}

Responsibility responsibility(const std::map<std::string, double>& cmi_leave_one_out, double cmi_full) {
    if (cmi_leave_one_out.empty())
        throw Error(ErrorKind::validation, "mcimr", "responsibility needs at least one attribute");
    if (cmi_full < 0) throw Error(ErrorKind::validation, "mcimr", "negative CMI passed to responsibility");
    double denominator = 0.0;
    for (const auto& [name, v] : cmi_leave_one_out) {
        if (v < 0) throw Error(ErrorKind::validation, "mcimr", "negative CMI passed to responsibility");
        denominator += v - cmi_full;
    }
    Responsibility out;
    if (!(denominator > 0.0)) {
        out.diagnostic = "sum of leave-one-out contributions is not positive";
        return out;
    }
    out.defined = true;
    for (const auto& [name, v] : cmi_leave_one_out) out.values[name] = (v - cmi_full) / denominator;
    return out;
}

Explanation run_mcimr(const Table& table, const QuerySpec& query, std::span<const std::string> candidates,
                      const McimrConfig& config) {
    config.validate();
    query.validate(table);
    const auto all = check_candidates(table, query, candidates);
    const RowSelection rows = query_rows(table, query);
    if (rows.empty()) throw Error(ErrorKind::estimation, "mcimr", "empty context selection");
    WeightPolicy policy(table, query, rows, config.ci_config, config.missing);
    const Search search(table, query, &policy);

    Explanation out;
    out.baseline = search.conditioned({});
    out.explainability = out.baseline;

    std::vector<const Column*> pool;
    for (const Column* c : all) {
        if (search.observed(*c)) pool.push_back(c);
        else out.unusable.push_back(c->name());
    }

    std::vector<double> v1(pool.size()), red(pool.size(), 0.0);
    std::vector<char> weighted(pool.size(), 0);
    parallel_for(pool.size(), config.threads, [&](std::size_t i) {
        bool w = false;
        v1[i] = search.single(*pool[i], &w);
        weighted[i] = w ? 1 : 0;
    });
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (weighted[i]) out.weighted_attrs.push_back(pool[i]->name());
    }
    std::sort(out.weighted_attrs.begin(), out.weighted_attrs.end());
    std::map<std::string, double> single_cmi;
    for (std::size_t i = 0; i < pool.size(); ++i) single_cmi[pool[i]->name()] = v1[i];

    std::vector<const Column*> chosen;
    while (chosen.size() < config.k && !pool.empty()) {
        std::vector<double> score(pool.size());
        const double divisor = chosen.empty() ? 1.0 : static_cast<double>(chosen.size());
        for (std::size_t i = 0; i < pool.size(); ++i) score[i] = v1[i] + red[i] / divisor;
        const std::size_t b = argmin(pool, score);
        const Column& pick = *pool[b];

        TraceStep step;
        step.chosen = pick.name();
        step.criterion = score[b];
        step.cmi = v1[b];
        step.redundancy = red[b] / divisor;
        step.candidates_examined = pool.size();
        step.stop_test = ci_test(search.o, pick, chosen, rows.rows(), {}, config.ci_config);
        if (config.stop_on_independence && step.stop_test.independent()) {
            out.trace.push_back(std::move(step));
            break;
        }

        chosen.push_back(&pick);
        out.selected.push_back(pick.name());
        out.explainability = chosen.size() == 1 ? v1[b] : search.conditioned(chosen);
        step.accepted = true;
        step.explainability = out.explainability;
        out.trace.push_back(std::move(step));

        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(b));
        v1.erase(v1.begin() + static_cast<std::ptrdiff_t>(b));
        red.erase(red.begin() + static_cast<std::ptrdiff_t>(b));
        if (chosen.size() < config.k) {
            parallel_for(pool.size(), config.threads, [&](std::size_t i) { red[i] += search.pair(*pool[i], pick); });
        }
    }

    if (!chosen.empty()) {
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            std::vector<const Column*> rest;
            for (std::size_t j = 0; j < chosen.size(); ++j) {
                if (j != i) rest.push_back(chosen[j]);
            }
            double v = out.baseline;
            if (rest.size() == 1) v = single_cmi.at(rest[0]->name());
            else if (rest.size() > 1) v = search.conditioned(rest);
            out.leave_one_out[chosen[i]->name()] = v;
        }
        out.responsibility = responsibility(out.leave_one_out, out.explainability);
    }
    out.missing = policy.diagnostics();
    return out;
}

CriterionComponents criterion_components(const Table& table, const QuerySpec& query,
                                         std::span<const std::string> subset) {
    query.validate(table);
    const auto cols = check_candidates(table, query, subset);
    if (cols.empty()) throw Error(ErrorKind::validation, "mcimr", "criterion_components needs a non-empty subset");
    const Search search(table, query, nullptr);
    const double k = static_cast<double>(cols.size());
    CriterionComponents out;
    for (const Column* e : cols) out.ci += search.single(*e);
    out.ci /= k;
    for (const Column* a : cols) {
        for (const Column* b : cols) {
            if (a == b) {
                const Column* one[] = {a};
                out.rd += joint_entropy(one, search.rows.rows());
            } else {
                out.rd += search.pair(*a, *b);
            }
        }
    }
    out.rd /= k * k;
    return out;
}

}  // namespace confex
