#include "confex/missing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "confex/error.hpp"

namespace confex {

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(sigmoid(z)) and log(1 - sigmoid(z)) without overflow.
double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

struct Pattern {
    std::vector<std::size_t> active;  // feature indices set to 1, intercept excluded
    double n = 0;
    double present = 0;
};

class LogisticFit {
public:
    LogisticFit(std::vector<Pattern> patterns, std::size_t features, double l2)
        : patterns_(std::move(patterns)), features_(features), l2_(l2) {
        for (const auto& p : patterns_) total_ += p.n;
    }

    double eta(const std::vector<double>& beta, const Pattern& p) const {
        double z = beta[0];
        for (auto f : p.active) z += beta[f];
        return z;
    }

    double objective(const std::vector<double>& beta) const {
        double ll = 0;
        for (const auto& p : patterns_) {
            const double z = eta(beta, p);
            ll += p.present * log_sigmoid(z) + (p.n - p.present) * log_sigmoid(-z);
        }
        double pen = 0;
        for (std::size_t j = 1; j < beta.size(); ++j) pen += beta[j] * beta[j];
        return ll / total_ - 0.5 * l2_ * pen;
    }

    void gradient(const std::vector<double>& beta, std::vector<double>& g) const {
        std::fill(g.begin(), g.end(), 0.0);
        for (const auto& p : patterns_) {
            const double r = (p.present - p.n * sigmoid(eta(beta, p))) / total_;
            g[0] += r;
            for (auto f : p.active) g[f] += r;
        }
        for (std::size_t j = 1; j < g.size(); ++j) g[j] -= l2_ * beta[j];
    }

    // Accelerated gradient ascent with restart on objective decrease.
    std::vector<double> run(std::size_t max_iter, double tol, std::size_t max_active, std::size_t& iterations,
                            bool& converged) const {
        const std::size_t dim = features_ + 1;
        const double lipschitz = static_cast<double>(max_active + 1) / 4.0 + l2_;
        const double step = 1.0 / lipschitz;
        std::vector<double> x(dim, 0.0), y(dim, 0.0), next(dim), g(dim);
        double fx = objective(x);
        double t = 1.0;
        converged = false;
        iterations = 0;
        for (; iterations < max_iter; ++iterations) {
            gradient(y, g);
            double gmax = 0;
            for (double v : g) gmax = std::max(gmax, std::abs(v));
            if (gmax < tol) {
                x = y;
                converged = true;
                break;
            }
            for (std::size_t j = 0; j < dim; ++j) next[j] = y[j] + step * g[j];
            const double fn = objective(next);
            if (fn < fx) {
                // Momentum overshot: restart from x.
                y = x;
                t = 1.0;
                continue;
            }
            const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
            for (std::size_t j = 0; j < dim; ++j) y[j] = next[j] + ((t - 1.0) / t_next) * (next[j] - x[j]);
            x.swap(next);
            fx = fn;
            t = t_next;
        }
        return x;
    }

private:
    std::vector<Pattern> patterns_;
    std::size_t features_;
    double l2_;
    double total_ = 0;
};

// Clip-implied weight bounds; weights left unadjusted are pulled inside them.
void finish_range(WeightVector& out, const IpwConfig& config) {
    const double rate = out.diagnostics.observed_rate;
    out.w_min = rate >= 1.0 ? 1.0 : rate / config.clip_high;
    out.w_max = rate >= 1.0 ? 1.0 : rate / config.clip_low;
    for (double& w : out.weights) {
        if (w > 0) w = std::clamp(w, out.w_min, out.w_max);
    }
}

}  // namespace

Column observation_indicator(const std::vector<bool>& observed, std::string name) {
    std::vector<std::uint32_t> codes(observed.size());
    for (std::size_t i = 0; i < observed.size(); ++i) codes[i] = observed[i] ? 1u : 0u;
    Column c = Column::from_codes(std::move(name), codes, {"0", "1"});
    c.set_origin(ColumnOrigin::derived);
    return c;
}

Column observation_indicator(const Column& column) {
    std::vector<bool> observed(column.size());
    for (std::size_t i = 0; i < observed.size(); ++i) observed[i] = !column.is_missing(i);
    return observation_indicator(observed, "R[" + column.name() + "]");
}

WeightVector fit_ipw_indicator(const Table& table, const std::vector<bool>& observed, std::string label,
                               std::span<const std::string> predictors, const RowSelection& selection,
                               const IpwConfig& config) {
    if (observed.size() != table.row_count() || selection.universe() != table.row_count())
        throw Error(ErrorKind::validation, "missing", "observation indicator does not match the table");
    if (!(config.clip_low > 0 && config.clip_low < config.clip_high && config.clip_high < 1))
        throw Error(ErrorKind::validation, "missing", "clip bounds must satisfy 0 < low < high < 1");

    std::vector<const Column*> cols;
    std::vector<std::size_t> offset;
    WeightVector out;
    out.target_attr = std::move(label);
    out.diagnostics.features.push_back("intercept");
    std::size_t features = 0;
    for (const auto& name : predictors) {
        const Column& c = table.column(name);
        if (c.cardinality() < 2) continue;
        cols.push_back(&c);
        offset.push_back(features);
        // Reference coding: level 0 is absorbed by the intercept.
        for (std::uint32_t v = 1; v < c.cardinality(); ++v)
            out.diagnostics.features.push_back(c.name() + "=" + c.label(v));
        features += c.cardinality() - 1;
    }

    std::map<std::vector<std::uint32_t>, Pattern> patterns;
    std::vector<std::uint32_t> key(cols.size());
    double fit_rows = 0, fit_present = 0;
    for (auto r : selection.rows()) {
        bool complete = true;
        for (std::size_t k = 0; k < cols.size() && complete; ++k) {
            auto code = cols[k]->code(r);
            if (!code) complete = false;
            else key[k] = *code;
        }
        if (!complete) {
            ++out.diagnostics.dropped_rows;
            continue;
        }
        auto& p = patterns[key];
        p.n += 1;
        if (observed[r]) p.present += 1;
        fit_rows += 1;
        if (observed[r]) fit_present += 1;
    }
    if (fit_present == 0)
        throw Error(ErrorKind::estimation, "missing", "'" + out.target_attr + "' is never observed on the fitting rows");

    out.weights.assign(table.row_count(), 0.0);
    out.diagnostics.observed_rate = fit_present / fit_rows;
    if (fit_present == fit_rows) {
        for (std::size_t i = 0; i < observed.size(); ++i) out.weights[i] = observed[i] ? 1.0 : 0.0;
        out.diagnostics.coefficients.assign(features + 1, 0.0);
        out.diagnostics.converged = true;
        finish_range(out, config);
        return out;
    }

    std::vector<Pattern> list;
    list.reserve(patterns.size());
    for (auto& [k, p] : patterns) {
        for (std::size_t c = 0; c < k.size(); ++c) {
            if (k[c] > 0) p.active.push_back(1 + offset[c] + (k[c] - 1));
        }
        list.push_back(p);
    }
    LogisticFit fit(std::move(list), features, config.l2);
    const std::vector<double> beta = fit.run(config.max_iterations, config.tolerance, cols.size(),
                                             out.diagnostics.iterations, out.diagnostics.converged);
    out.diagnostics.coefficients = beta;

    const double marginal = out.diagnostics.observed_rate;
    for (std::size_t r = 0; r < table.row_count(); ++r) {
        bool complete = true;
        double z = beta[0];
        for (std::size_t k = 0; k < cols.size() && complete; ++k) {
            auto code = cols[k]->code(r);
            if (!code) complete = false;
            else if (*code > 0) z += beta[1 + offset[k] + (*code - 1)];
        }
        const bool fitted = selection.contains(r) && complete;
        double p = sigmoid(z);
        if (complete) {
            const double clipped = std::clamp(p, config.clip_low, config.clip_high);
            if (clipped != p && fitted) ++out.diagnostics.clipped;
            p = clipped;
        }
        if (!observed[r]) continue;
        if (complete) {
            out.weights[r] = marginal / p;
        } else {
            out.weights[r] = 1.0;
            if (selection.contains(r)) ++out.diagnostics.unadjusted_rows;
        }
    }
    finish_range(out, config);
    return out;
}

WeightVector fit_ipw(const Table& table, std::string_view target, std::span<const std::string> predictors,
                     const RowSelection& selection, const IpwConfig& config) {
    const Column& c = table.column(target);
    std::vector<bool> observed(c.size());
    for (std::size_t i = 0; i < observed.size(); ++i) observed[i] = !c.is_missing(i);
    std::vector<std::string> preds;
    for (const auto& p : predictors) {
        if (p != target) preds.push_back(p);
    }
    return fit_ipw_indicator(table, observed, c.name(), preds, selection, config);
}

RecoverabilityReport recoverable_cmi(const Table& table, const QuerySpec& query, std::string_view e,
                                     const CiTestConfig& config) {
    query.validate(table);
    const Column& col = table.column(e);
    RecoverabilityReport report;
    report.target = col.name();
    report.kind = RecoverabilityKind::cmi_query;

    const RowSelection rows = query_rows(table, query);
    std::size_t missing = 0;
    for (auto r : rows.rows()) missing += col.is_missing(r) ? 1 : 0;
    if (missing == 0) return report;
    if (missing == rows.selected_count())
        throw Error(ErrorKind::estimation, "missing", "'" + col.name() + "' is never observed on the query rows");

    const Column indicator = observation_indicator(col);
    const Column& o = table.column(query.outcome);
    const Column& t = table.column(query.exposure);
    std::vector<const Column*> z = column_refs(table, query.context_columns());

    auto run = [&](std::string condition, const std::vector<const Column*>& given) {
        CiResult res = ci_test(o, indicator, given, rows.rows(), {}, config);
        report.recoverable = report.recoverable && res.independent();
        report.tests.push_back({std::move(condition), res});
    };
    run(query.outcome + " _||_ " + indicator.name() + " | C", z);
    auto with_t = z;
    with_t.insert(with_t.begin(), &t);
    run(query.outcome + " _||_ " + indicator.name() + " | " + query.exposure + ", C", with_t);
    return report;
}

RecoverabilityReport recoverable_pairwise(const Table& table, std::string_view e_i, std::string_view e_j,
                                          const CiTestConfig& config, const RowSelection* selection) {
    const Column& a = table.column(e_i);
    const Column& b = table.column(e_j);
    if (&a == &b) throw Error(ErrorKind::validation, "missing", "pairwise recoverability needs two columns");
    const RowSelection all = selection ? RowSelection{} : RowSelection::all(table.row_count());
    const RowSelection& sel = selection ? *selection : all;

    RecoverabilityReport report;
    report.target = a.name();
    report.partner = b.name();
    report.kind = RecoverabilityKind::pairwise_mi;

    std::vector<bool> joint(table.row_count());
    std::size_t joint_count = 0, missing = 0;
    for (auto r : sel.rows()) {
        joint[r] = !a.is_missing(r) && !b.is_missing(r);
        joint_count += joint[r] ? 1 : 0;
        missing += joint[r] ? 0 : 1;
    }
    if (missing == 0) return report;
    if (joint_count == 0)
        throw Error(ErrorKind::estimation, "missing",
                    "'" + a.name() + "' and '" + b.name() + "' are never observed together");

    const Column indicator = observation_indicator(joint, "R[" + a.name() + "," + b.name() + "]");
    for (const Column* col : {&a, &b}) {
        std::vector<std::uint32_t> rows;
        for (auto r : sel.rows()) {
            if (!col->is_missing(r)) rows.push_back(r);
        }
        CiResult res = ci_test(*col, indicator, {}, rows, {}, config);
        report.recoverable = report.recoverable && res.independent();
        report.tests.push_back({col->name() + " _||_ " + indicator.name(), res});
    }
    return report;
}

std::vector<std::string> default_ipw_predictors(const Table& table, const QuerySpec& query,
                                                std::span<const std::string> exclude,
                                                std::uint32_t max_cardinality) {
    const auto context = query.context_columns();
    std::vector<std::string> out;
    for (const auto& c : table.columns()) {
        if (c.origin() != ColumnOrigin::input) continue;
        if (c.cardinality() < 2 || c.cardinality() > max_cardinality) continue;
        const auto& n = c.name();
        if (n == query.outcome || n == query.exposure) continue;
        if (std::find(context.begin(), context.end(), n) != context.end()) continue;
        if (std::find(exclude.begin(), exclude.end(), n) != exclude.end()) continue;
        out.push_back(n);
    }
    return out;
}

WeightSummary summarize(const WeightVector& w, const RowSelection& rows) {
    WeightSummary s;
    s.min = std::numeric_limits<double>::infinity();
    for (auto r : rows.rows()) {
        const double v = w.weights.at(r);
        if (v <= 0) continue;
        ++s.nonzero;
        s.sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    if (s.nonzero == 0) s.min = 0;
    else s.mean = s.sum / static_cast<double>(s.nonzero);
    s.clipped = w.diagnostics.clipped;
    s.converged = w.diagnostics.converged;
    return s;
}

WeightPolicy::WeightPolicy(const Table& table, const QuerySpec& query, const RowSelection& rows, CiTestConfig ci,
                           MissingConfig config)
    : table_(table), query_(query), rows_(rows), ci_(ci), config_(std::move(config)) {}

Weights WeightPolicy::for_attribute(const std::string& e) {
    if (!config_.enabled) return {};
    std::lock_guard lock(mutex_);
    auto it = single_.find(e);
    if (it == single_.end()) {
        Entry entry;
        entry.info.attribute = e;
        const Column& col = table_.column(e);
        bool any_missing = false;
        for (auto r : rows_.rows()) {
            if (col.is_missing(r)) {
                any_missing = true;
                break;
            }
        }
        if (any_missing) {
            entry.info.report = recoverable_cmi(table_, query_, e, ci_);
            if (!entry.info.report.recoverable) {
                const std::vector<std::string> exclude{e};
                const auto preds = config_.predictors
                                       ? *config_.predictors
                                       : default_ipw_predictors(table_, query_, exclude,
                                                                config_.max_predictor_cardinality);
                entry.weights = fit_ipw(table_, e, preds, rows_, config_.ipw);
                entry.info.weights = summarize(*entry.weights, rows_);
            }
        } else {
            entry.info.report.target = e;
        }
        it = single_.emplace(e, std::move(entry)).first;
    }
    if (!it->second.weights) return {};
    return it->second.weights->span();
}

Weights WeightPolicy::for_pair(const std::string& a, const std::string& b) {
    if (!config_.enabled) return {};
    auto key = a < b ? std::pair{a, b} : std::pair{b, a};
    std::lock_guard lock(mutex_);
    auto it = pairs_.find(key);
    if (it == pairs_.end()) {
        Entry entry;
        entry.info.attribute = key.first;
        entry.info.partner = key.second;
        const Column& ca = table_.column(key.first);
        const Column& cb = table_.column(key.second);
        std::vector<bool> joint(table_.row_count(), false);
        bool any_missing = false;
        for (auto r : rows_.rows()) {
            joint[r] = !ca.is_missing(r) && !cb.is_missing(r);
            any_missing = any_missing || !joint[r];
        }
        if (any_missing) {
            entry.info.report = recoverable_pairwise(table_, key.first, key.second, ci_, &rows_);
            if (!entry.info.report.recoverable) {
                const std::vector<std::string> exclude{key.first, key.second};
                const auto preds = config_.predictors
                                       ? *config_.predictors
                                       : default_ipw_predictors(table_, query_, exclude,
                                                                config_.max_predictor_cardinality);
                std::vector<std::string> filtered;
                for (const auto& p : preds) {
                    if (p != key.first && p != key.second) filtered.push_back(p);
                }
                entry.weights = fit_ipw_indicator(table_, joint, key.first + "," + key.second, filtered, rows_,
                                                  config_.ipw);
                entry.info.weights = summarize(*entry.weights, rows_);
            }
        } else {
            entry.info.report.target = key.first;
            entry.info.report.partner = key.second;
            entry.info.report.kind = RecoverabilityKind::pairwise_mi;
        }
        it = pairs_.emplace(key, std::move(entry)).first;
    }
    if (!it->second.weights) return {};
    return it->second.weights->span();
}

bool WeightPolicy::weighted(const std::string& e) { return !for_attribute(e).empty(); }

std::vector<AttributeMissingness> WeightPolicy::diagnostics() const {
    std::lock_guard lock(mutex_);
    std::vector<AttributeMissingness> out;
    for (const auto& [k, e] : single_) {
        if (!e.info.report.tests.empty()) out.push_back(e.info);
    }
    for (const auto& [k, e] : pairs_) {
        if (!e.info.report.tests.empty()) out.push_back(e.info);
    }
    return out;
}

}  // namespace confex
