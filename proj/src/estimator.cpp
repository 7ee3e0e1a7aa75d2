#include "confex/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <unordered_map>

#include "confex/error.hpp"

namespace confex {

namespace {

constexpr std::uint32_t kNone = Column::kMissing;

// A discrete variable over table rows: either a column's storage or an owned
// composite key vector. `codes` is empty for the constant variable.
struct Slot {
    std::optional<CodeSpan> codes;
    std::uint64_t card = 1;
    std::vector<std::uint32_t> owned;

    Slot() = default;
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;
    Slot(Slot&&) = default;
    Slot& operator=(Slot&&) = default;

    static Slot of(const Column& col) {
        Slot s;
        s.codes = col.view();
        s.card = std::max<std::uint64_t>(col.cardinality(), 1);
        return s;
    }
    void adopt(std::vector<std::uint32_t> keys, std::uint64_t cardinality) {
        owned = std::move(keys);
        codes = CodeSpan{std::span<const std::uint32_t>(owned)};
        card = std::max<std::uint64_t>(cardinality, 1);
    }
};

template <typename F>
void for_each_code(const CodeSpan& span, std::span<const std::uint32_t> rows, F&& f) {
    std::visit(
        [&](auto codes) {
            using T = typename decltype(codes)::value_type;
            for (auto r : rows) {
                const T c = codes[r];
                f(r, c == missing_code_v<T> ? kNone : static_cast<std::uint32_t>(c));
            }
        },
        span);
}

// Relabels the slot's observed keys over `rows` to dense ids in first-seen order.
void compact(Slot& slot, std::span<const std::uint32_t> rows, std::size_t universe) {
    if (!slot.codes) return;
    std::vector<std::uint32_t> keys(universe, kNone);
    std::uint32_t next = 0;
    if (slot.card <= (1U << 24)) {
        std::vector<std::uint32_t> lookup(slot.card, kNone);
        for_each_code(*slot.codes, rows, [&](std::uint32_t r, std::uint32_t c) {
            if (c == kNone) return;
            if (lookup[c] == kNone) lookup[c] = next++;
            keys[r] = lookup[c];
        });
    } else {
        std::unordered_map<std::uint32_t, std::uint32_t> lookup;
        for_each_code(*slot.codes, rows, [&](std::uint32_t r, std::uint32_t c) {
            if (c == kNone) return;
            auto [it, fresh] = lookup.try_emplace(c, next);
            if (fresh) ++next;
            keys[r] = it->second;
        });
    }
    slot.adopt(std::move(keys), next);
}

std::size_t universe_of(ColumnRefs cols, std::span<const std::uint32_t> rows) {
    if (!cols.empty()) return cols.front()->size();
    return rows.empty() ? 0 : static_cast<std::size_t>(rows.back()) + 1;
}

// Mixed-radix key over several columns, compacted whenever the radix product
// would leave 32 bits or grows well past the number of rows.
Slot composite(ColumnRefs cols, std::span<const std::uint32_t> rows, std::size_t universe) {
    Slot slot;
    if (cols.empty()) return slot;
    if (cols.size() == 1) return Slot::of(*cols.front());

    std::vector<std::uint32_t> keys(universe, kNone);
    for_each_code(cols.front()->view(), rows, [&](std::uint32_t r, std::uint32_t c) { keys[r] = c; });
    slot.adopt(std::move(keys), cols.front()->cardinality());

    for (std::size_t i = 1; i < cols.size(); ++i) {
        const std::uint64_t radix = std::max<std::uint64_t>(cols[i]->cardinality(), 1);
        if (slot.card * radix >= kNone) compact(slot, rows, universe);
        auto& k = slot.owned;
        for_each_code(cols[i]->view(), rows, [&](std::uint32_t r, std::uint32_t c) {
            if (k[r] == kNone) return;
            k[r] = c == kNone ? kNone : static_cast<std::uint32_t>(k[r] * radix + c);
        });
        slot.card *= radix;
    }
    if (slot.card > 4 * rows.size() + 16) compact(slot, rows, universe);
    return slot;
}

// Joint weighted counts of up to three slots, dense when the cell grid is small.
struct Joint {
    std::uint64_t cx = 1, cy = 1, cz = 1;
    bool dense = true;
    std::vector<double> cells;
    std::unordered_map<std::uint64_t, double> sparse;
    double total = 0.0;
    double sum_w2 = 0.0;
    std::size_t rows_used = 0;

    double effective_n() const { return sum_w2 > 0 ? total * total / sum_w2 : 0.0; }

    template <typename F>
    void for_each(F&& f) const {
        if (dense) {
            for (std::uint64_t i = 0; i < cells.size(); ++i) {
                if (cells[i] > 0) f(i, cells[i]);
            }
        } else {
            for (const auto& [key, c] : sparse) f(key, c);
        }
    }
};

struct NoneAcc {
    static constexpr bool missing(std::uint32_t) { return false; }
    std::uint32_t operator()(std::uint32_t) const { return 0; }
};

template <typename T>
struct SpanAcc {
    const T* data;
    std::uint32_t operator()(std::uint32_t r) const { return data[r]; }
    static constexpr bool missing(std::uint32_t v) { return v == missing_code_v<T>; }
};

struct UnitWeight {
    static constexpr bool weighted = false;
    double operator()(std::uint32_t) const { return 1.0; }
};

struct SpanWeight {
    static constexpr bool weighted = true;
    const double* data;
    double operator()(std::uint32_t r) const { return data[r]; }
};

template <typename XA, typename YA, typename ZA, typename WA>
void accumulate(Joint& joint, std::span<const std::uint32_t> rows, XA xa, YA ya, ZA za, WA wa) {
    const std::uint64_t cy = joint.cy;
    const std::uint64_t cz = joint.cz;
    double total = 0.0, sum_w2 = 0.0;
    std::size_t used = 0;
    auto visit_rows = [&](auto&& add) {
        for (auto r : rows) {
            const std::uint32_t x = xa(r);
            if (XA::missing(x)) continue;
            const std::uint32_t y = ya(r);
            if (YA::missing(y)) continue;
            const std::uint32_t z = za(r);
            if (ZA::missing(z)) continue;
            const double w = wa(r);
            if constexpr (WA::weighted) {
                if (!(w > 0.0)) continue;
            }
            add((static_cast<std::uint64_t>(x) * cy + y) * cz + z, w);
            total += w;
            sum_w2 += w * w;
            ++used;
        }
    };
    if (joint.dense) {
        double* cells = joint.cells.data();
        visit_rows([cells](std::uint64_t key, double w) { cells[key] += w; });
    } else {
        auto& map = joint.sparse;
        visit_rows([&map](std::uint64_t key, double w) { map[key] += w; });
    }
    joint.total = total;
    joint.sum_w2 = sum_w2;
    joint.rows_used = used;
}

template <typename XA, typename YA, typename ZA>
void dispatch_weight(Joint& joint, std::span<const std::uint32_t> rows, XA xa, YA ya, ZA za, Weights w) {
    if (w.empty()) {
        accumulate(joint, rows, xa, ya, za, UnitWeight{});
    } else {
        accumulate(joint, rows, xa, ya, za, SpanWeight{w.data()});
    }
}

template <typename F>
void with_accessor(const Slot& slot, F&& f) {
    if (!slot.codes) {
        f(NoneAcc{});
        return;
    }
    std::visit([&](auto codes) { f(SpanAcc<typename decltype(codes)::value_type>{codes.data()}); }, *slot.codes);
}

std::uint64_t dense_limit(std::size_t rows) {
    return std::min<std::uint64_t>(std::max<std::uint64_t>(1U << 12, 4ULL * rows), 1ULL << 23);
}

Joint count(Slot& x, Slot& y, Slot& z, std::span<const std::uint32_t> rows, std::size_t universe, Weights w) {
    if (!w.empty() && w.size() != universe) {
        throw Error(ErrorKind::validation, "estimator", "weight vector length does not match the table");
    }
    auto product = [&] {
        return static_cast<unsigned __int128>(x.card) * y.card * z.card;
    };
    if (product() >= (static_cast<unsigned __int128>(1) << 63)) {
        compact(x, rows, universe);
        compact(y, rows, universe);
        compact(z, rows, universe);
        if (product() >= (static_cast<unsigned __int128>(1) << 63)) {
            throw Error(ErrorKind::estimation, "estimator", "joint domain too large");
        }
    }
    Joint joint;
    joint.cx = x.card;
    joint.cy = y.card;
    joint.cz = z.card;
    const auto cells = static_cast<std::uint64_t>(product());
    joint.dense = cells <= dense_limit(rows.size());
    if (joint.dense) {
        joint.cells.assign(cells, 0.0);
    } else {
        joint.sparse.reserve(std::min<std::size_t>(rows.size(), 1U << 20));
    }
    with_accessor(x, [&](auto xa) {
        with_accessor(y, [&](auto ya) {
            with_accessor(z, [&](auto za) { dispatch_weight(joint, rows, xa, ya, za, w); });
        });
    });
    if (joint.rows_used == 0 || !(joint.total > 0)) {
        throw Error(ErrorKind::estimation, "estimator", "empty effective selection");
    }
    return joint;
}

struct EntropyParts {
    double plugin = 0.0;
    std::size_t distinct = 0;
};

// Sums in ascending count order, so equal partitions give bitwise equal entropies.
template <typename Range>
EntropyParts entropy_of_counts(const Range& counts, double total) {
    EntropyParts parts;
    std::vector<double> positive;
    for (double c : counts) {
        if (c > 0) positive.push_back(c);
    }
    std::sort(positive.begin(), positive.end());
    double acc = 0.0;
    for (double c : positive) {
        const double p = c / total;
        acc -= p * std::log2(p);
    }
    parts.distinct = positive.size();
    parts.plugin = acc > 0.0 ? acc : 0.0;
    return parts;
}

double mm_value(const EntropyParts& parts, double effective_n) {
    return parts.plugin + mm_correction(parts.distinct, effective_n);
}

enum SlotMask : unsigned { kX = 1, kY = 2, kZ = 4 };

// Entropy of the marginal over the slots in `mask`.
EntropyParts marginal_entropy(const Joint& joint, unsigned mask) {
    const std::uint64_t mx = (mask & kX) ? joint.cx : 1;
    const std::uint64_t my = (mask & kY) ? joint.cy : 1;
    const std::uint64_t mz = (mask & kZ) ? joint.cz : 1;
    auto project = [&](std::uint64_t key) {
        const std::uint64_t z = key % joint.cz;
        const std::uint64_t xy = key / joint.cz;
        const std::uint64_t y = xy % joint.cy;
        const std::uint64_t x = xy / joint.cy;
        return (((mask & kX) ? x : 0) * my + ((mask & kY) ? y : 0)) * mz + ((mask & kZ) ? z : 0);
    };
    if (mask == (kX | kY | kZ)) {
        if (joint.dense) return entropy_of_counts(joint.cells, joint.total);
        std::vector<double> counts;
        counts.reserve(joint.sparse.size());
        for (const auto& [k, c] : joint.sparse) counts.push_back(c);
        return entropy_of_counts(counts, joint.total);
    }
    const std::uint64_t cells = mx * my * mz;
    if (joint.dense && cells <= joint.cells.size()) {
        std::vector<double> marg(cells, 0.0);
        joint.for_each([&](std::uint64_t key, double c) { marg[project(key)] += c; });
        return entropy_of_counts(marg, joint.total);
    }
    std::unordered_map<std::uint64_t, double> marg;
    joint.for_each([&](std::uint64_t key, double c) { marg[project(key)] += c; });
    std::vector<double> counts;
    counts.reserve(marg.size());
    for (const auto& [k, c] : marg) counts.push_back(c);
    return entropy_of_counts(counts, joint.total);
}

// x and y are swapped into name order so that I(x;y|z) and I(y;x|z) share one
// accumulation order.
bool swap_for_symmetry(const Column& x, const Column& y) { return y.name() < x.name(); }

CmiTerms terms_from_joint(const Joint& joint) {
    const double n = joint.effective_n();
    CmiTerms t;
    const auto xz = marginal_entropy(joint, kX | kZ);
    const auto yz = marginal_entropy(joint, kY | kZ);
    const auto xyz = marginal_entropy(joint, kX | kY | kZ);
    const auto z = marginal_entropy(joint, kZ);
    t.h_xz = mm_value(xz, n);
    t.h_yz = mm_value(yz, n);
    t.h_xyz = mm_value(xyz, n);
    t.h_z = mm_value(z, n);
    t.m_xz = xz.distinct;
    t.m_yz = yz.distinct;
    t.m_xyz = xyz.distinct;
    t.m_z = z.distinct;
    t.effective_n = n;
    t.rows_used = joint.rows_used;
    return t;
}

void check_distinct(const Column& x, const Column& y, ColumnRefs z) {
    if (&x == &y) throw Error(ErrorKind::validation, "estimator", "cmi requires x != y");
    for (const auto* c : z) {
        if (c == &x || c == &y) {
            throw Error(ErrorKind::validation, "estimator", "cmi conditioning set contains x or y");
        }
    }
}

std::uint64_t splitmix64(std::uint64_t v) {
    v += 0x9e3779b97f4a7c15ULL;
    v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
    v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
    return v ^ (v >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, const Column& x, const Column& y, ColumnRefs z) {
    std::uint64_t h = splitmix64(seed);
    auto mix = [&](const std::string& s) { h = splitmix64(h ^ std::hash<std::string>{}(s)); };
    mix(x.name());
    mix(y.name());
    for (const auto* c : z) mix(c->name());
    return h;
}

}  // namespace

// ---------------------------------------------------------------------------

double FrequencyTable::count(const std::vector<std::uint32_t>& tuple) const {
    auto it = std::lower_bound(cells.begin(), cells.end(), tuple,
                               [](const auto& cell, const auto& key) { return cell.first < key; });
    return (it != cells.end() && it->first == tuple) ? it->second : 0.0;
}

FrequencyTable build_freq(const Table& table, std::span<const std::string> cols, const RowSelection& selection,
                          Weights weights) {
    if (cols.empty()) throw Error(ErrorKind::validation, "estimator", "build_freq needs at least one column");
    if (!weights.empty() && weights.size() != table.row_count()) {
        throw Error(ErrorKind::validation, "estimator", "weight vector length does not match the table");
    }
    const auto refs = column_refs(table, cols);
    FrequencyTable freq;
    freq.columns.assign(cols.begin(), cols.end());
    std::map<std::vector<std::uint32_t>, double> counts;
    double sum_w2 = 0.0;
    std::vector<std::uint32_t> tuple(refs.size());
    for (auto r : selection.rows()) {
        bool ok = true;
        for (std::size_t i = 0; i < refs.size() && ok; ++i) {
            const auto c = refs[i]->code(r);
            if (!c) ok = false;
            else tuple[i] = *c;
        }
        if (!ok) continue;
        const double w = weights.empty() ? 1.0 : weights[r];
        if (!(w > 0.0)) continue;
        counts[tuple] += w;
        freq.total += w;
        sum_w2 += w * w;
    }
    if (counts.empty()) throw Error(ErrorKind::estimation, "estimator", "empty effective selection");
    freq.cells.assign(counts.begin(), counts.end());
    freq.effective_n = freq.total * freq.total / sum_w2;
    return freq;
}

double mm_correction(std::size_t distinct, double effective_n) {
    if (distinct <= 1 || !(effective_n > 0)) return 0.0;
    return static_cast<double>(distinct - 1) / (2.0 * effective_n * std::numbers::ln2);
}

double entropy_plugin(const FrequencyTable& freq) {
    std::vector<double> counts;
    counts.reserve(freq.cells.size());
    for (const auto& [k, c] : freq.cells) counts.push_back(c);
    return entropy_of_counts(counts, freq.total).plugin;
}

double entropy_mm(const FrequencyTable& freq) {
    return entropy_plugin(freq) + mm_correction(freq.distinct(), freq.effective_n);
}

double joint_entropy(ColumnRefs cols, std::span<const std::uint32_t> rows, Weights weights) {
    if (cols.empty()) throw Error(ErrorKind::validation, "estimator", "entropy needs at least one column");
    const auto universe = universe_of(cols, rows);
    Slot x = composite(cols, rows, universe);
    Slot y, z;
    const auto joint = count(x, y, z, rows, universe, weights);
    return mm_value(marginal_entropy(joint, kX), joint.effective_n());
}

double conditional_entropy(const Column& x, ColumnRefs given, std::span<const std::uint32_t> rows,
                           Weights weights) {
    for (const auto* c : given) {
        if (c == &x) throw Error(ErrorKind::validation, "estimator", "conditioning set contains the target");
    }
    const auto universe = x.size();
    Slot sx = Slot::of(x);
    Slot sy;
    Slot sz = composite(given, rows, universe);
    const auto joint = count(sx, sy, sz, rows, universe, weights);
    const double n = joint.effective_n();
    const double h = mm_value(marginal_entropy(joint, kX | kZ), n) - mm_value(marginal_entropy(joint, kZ), n);
    return h > 0.0 ? h : 0.0;
}

CmiTerms cmi_terms(const Column& x, const Column& y, ColumnRefs z, std::span<const std::uint32_t> rows,
                   Weights weights) {
    check_distinct(x, y, z);
    const bool swap = swap_for_symmetry(x, y);
    const Column& a = swap ? y : x;
    const Column& b = swap ? x : y;
    const auto universe = x.size();
    Slot sx = Slot::of(a);
    Slot sy = Slot::of(b);
    Slot sz = composite(z, rows, universe);
    const auto joint = count(sx, sy, sz, rows, universe, weights);
    auto t = terms_from_joint(joint);
    if (swap) {
        std::swap(t.h_xz, t.h_yz);
        std::swap(t.m_xz, t.m_yz);
    }
    return t;
}

double cmi(const Column& x, const Column& y, ColumnRefs z, std::span<const std::uint32_t> rows, Weights weights) {
    return cmi_terms(x, y, z, rows, weights).value();
}

std::vector<const Column*> column_refs(const Table& table, std::span<const std::string> names) {
    std::vector<const Column*> refs;
    refs.reserve(names.size());
    for (const auto& n : names) refs.push_back(&table.column(n));
    return refs;
}

double cmi(const Table& table, std::string_view x, std::string_view y, std::span<const std::string> z,
           const RowSelection& selection, Weights weights) {
    const auto refs = column_refs(table, z);
    return cmi(table.column(x), table.column(y), refs, selection.rows(), weights);
}

double conditional_entropy(const Table& table, std::string_view x, std::span<const std::string> given,
                           const RowSelection& selection, Weights weights) {
    const auto refs = column_refs(table, given);
    return conditional_entropy(table.column(x), refs, selection.rows(), weights);
}

// ---------------------------------------------------------------------------
// Conditional independence

void CiTestConfig::validate() const {
    if (!(epsilon >= 0)) throw Error(ErrorKind::validation, "estimator", "epsilon must be >= 0");
    if (!(alpha > 0 && alpha < 1)) throw Error(ErrorKind::validation, "estimator", "alpha must lie in (0, 1)");
}

const char* to_string(CiVerdict verdict) {
    return verdict == CiVerdict::independent ? "independent" : "dependent";
}

CiResult ci_test(const Column& x, const Column& y, ColumnRefs z, std::span<const std::uint32_t> rows,
                 Weights weights, const CiTestConfig& config) {
    config.validate();
    CiResult result;
    result.cmi = cmi(x, y, z, rows, weights);
    if (result.cmi <= config.epsilon) {
        result.verdict = CiVerdict::independent;
        return result;
    }
    if (config.permutations == 0) {
        result.verdict = CiVerdict::dependent;
        return result;
    }

    // Gather the contributing rows into compact arrays, then shuffle x inside
    // each z stratum.
    const auto universe = x.size();
    Slot sz = composite(z, rows, universe);
    compact(sz, rows, universe);
    std::vector<std::uint32_t> xs, ys, zs;
    std::vector<double> ws;
    for (auto r : rows) {
        const auto cx = x.code(r);
        const auto cy = y.code(r);
        if (!cx || !cy) continue;
        std::uint32_t cz = 0;
        if (sz.codes) {
            cz = sz.owned[r];
            if (cz == kNone) continue;
        }
        const double w = weights.empty() ? 1.0 : weights[r];
        if (!weights.empty() && !(w > 0.0)) continue;
        xs.push_back(*cx);
        ys.push_back(*cy);
        zs.push_back(cz);
        ws.push_back(w);
    }
    const auto m = static_cast<std::uint32_t>(xs.size());
    std::vector<std::vector<std::uint32_t>> strata(sz.card);
    for (std::uint32_t i = 0; i < m; ++i) strata[zs[i]].push_back(i);

    std::vector<std::uint32_t> local(m);
    for (std::uint32_t i = 0; i < m; ++i) local[i] = i;
    Slot px, py, pz;
    py.codes = CodeSpan{std::span<const std::uint32_t>(ys)};
    py.card = std::max<std::uint64_t>(y.cardinality(), 1);
    pz.codes = CodeSpan{std::span<const std::uint32_t>(zs)};
    pz.card = sz.card;
    const Weights local_w = weights.empty() ? Weights{} : Weights{ws};

    px.codes = CodeSpan{std::span<const std::uint32_t>(xs)};
    px.card = std::max<std::uint64_t>(x.cardinality(), 1);
    const double observed = terms_from_joint(count(px, py, pz, local, m, local_w)).value();

    std::mt19937_64 rng(stream_seed(config.seed, x, y, z));
    std::vector<std::uint32_t> permuted = xs;
    std::size_t extreme = 0;
    for (std::size_t p = 0; p < config.permutations; ++p) {
        for (const auto& stratum : strata) {
            for (std::size_t i = stratum.size(); i > 1; --i) {
                std::uniform_int_distribution<std::size_t> pick(0, i - 1);
                std::swap(permuted[stratum[i - 1]], permuted[stratum[pick(rng)]]);
            }
        }
        px.codes = CodeSpan{std::span<const std::uint32_t>(permuted)};
        const auto joint = count(px, py, pz, local, m, local_w);
        if (terms_from_joint(joint).value() >= observed) ++extreme;
    }
    result.p_value = static_cast<double>(extreme) / static_cast<double>(config.permutations);
    result.verdict = *result.p_value > config.alpha ? CiVerdict::independent : CiVerdict::dependent;
    return result;
}

CiResult ci_test(const Table& table, std::string_view x, std::string_view y, std::span<const std::string> z,
                 const RowSelection& selection, Weights weights, const CiTestConfig& config) {
    const auto refs = column_refs(table, z);
    return ci_test(table.column(x), table.column(y), refs, selection.rows(), weights, config);
}

}  // namespace confex
