// Test-only table builders, generative fixtures and brute-force oracles.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "confex/dataset.hpp"

namespace fixtures {

using confex::Column;
using confex::Table;

// Integer codes with -1 as missing; labels are the decimal code.
inline Column int_column(const std::string& name, const std::vector<int>& values) {
    int top = -1;
    for (int v : values) top = std::max(top, v);
    std::vector<std::string> labels;
    for (int i = 0; i <= top; ++i) labels.push_back(std::to_string(i));
    std::vector<std::uint32_t> codes;
    codes.reserve(values.size());
    for (int v : values) codes.push_back(v < 0 ? Column::kMissing : static_cast<std::uint32_t>(v));
    return Column::from_codes(name, codes, labels);
}

inline Table make_table(const std::vector<std::pair<std::string, std::vector<int>>>& cols,
                        const std::string& name = "fixture") {
    Table t(name);
    for (const auto& [n, v] : cols) t.add_column(int_column(n, v));
    return t;
}

inline std::vector<std::uint32_t> all_rows(const Table& t) {
    std::vector<std::uint32_t> rows(t.row_count());
    for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
}

// CSV text of a table's labels; `prefix` keeps integer labels categorical on re-ingestion.
inline std::string to_csv(const Table& t, const std::string& prefix = "") {
    std::string out;
    for (std::size_t c = 0; c < t.column_count(); ++c) out += (c ? "," : "") + t.column(c).name();
    out += '\n';
    for (std::size_t r = 0; r < t.row_count(); ++r) {
        for (std::size_t c = 0; c < t.column_count(); ++c) {
            if (c) out += ',';
            const auto code = t.column(c).code(r);
            if (code) out += prefix + t.column(c).label(*code);
        }
        out += '\n';
    }
    return out;
}

// Sampled table: each column generated row by row from earlier values.
class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : rng_(seed) {}
    int uniform(int k) { return std::uniform_int_distribution<int>(0, k - 1)(rng_); }
    bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
    std::mt19937_64& rng() { return rng_; }

private:
    std::mt19937_64 rng_;
};

// O and T each carry a noisy copy of Z1 and of Z2 (binary) in
// separate digits; N1..N<distractors> are uniform noise. O is independent of
// T given {Z1, Z2} by construction, and each Z alone removes its own share
// of I(O;T).
inline Table planted_confounders(std::size_t n, std::uint64_t seed, int distractors = 6) {
    Sampler s(seed);
    std::vector<int> z1(n), z2(n), t(n), o(n);
    std::vector<std::vector<int>> noise(distractors, std::vector<int>(n));
    for (std::size_t i = 0; i < n; ++i) {
        z1[i] = s.uniform(2);
        z2[i] = s.uniform(2);
        auto noisy = [&](int z) { return s.coin(0.85) ? z : s.uniform(2); };
        t[i] = 2 * noisy(z1[i]) + noisy(z2[i]);
        o[i] = 2 * noisy(z2[i]) + noisy(z1[i]);
        for (int d = 0; d < distractors; ++d) noise[d][i] = s.uniform(2 + d % 3);
    }
    std::vector<std::pair<std::string, std::vector<int>>> cols{{"O", o}, {"T", t}, {"Z1", z1}, {"Z2", z2}};
    for (int d = 0; d < distractors; ++d) cols.emplace_back("N" + std::to_string(d + 1), noise[d]);
    return make_table(cols, "planted");
}

// ---------------------------------------------------------------------------
// Exact tables: every combination of independent uniform noise variables
// appears exactly once, so empirical frequencies equal the generating
// distribution and its independences hold exactly for the plug-in estimate.

struct ExactVar {
    std::string name;
    std::function<int(const std::vector<int>&)> value;  // from the noise assignment
};

inline Table exact_table(const std::vector<int>& noise_sizes, const std::vector<ExactVar>& vars,
                         int replicate = 1) {
    std::vector<std::vector<int>> columns(vars.size());
    std::vector<int> assign(noise_sizes.size(), 0);
    while (true) {
        for (int rep = 0; rep < replicate; ++rep) {
            for (std::size_t v = 0; v < vars.size(); ++v) columns[v].push_back(vars[v].value(assign));
        }
        std::size_t i = 0;
        while (i < assign.size() && ++assign[i] == noise_sizes[i]) assign[i++] = 0;
        if (i == assign.size()) break;
    }
    std::vector<std::pair<std::string, std::vector<int>>> cols;
    for (std::size_t v = 0; v < vars.size(); ++v) cols.emplace_back(vars[v].name, columns[v]);
    return make_table(cols, "exact");
}

// Random exact fixture: `candidates` attributes E1.. with up to `max_values`
// levels each (some derived from earlier ones), and O, T driven by random
// subsets of them through random lookup tables plus their own noise.
inline Table random_exact_fixture(std::uint64_t seed, int candidates, int max_values) {
    Sampler s(seed);
    std::vector<int> noise_sizes;
    std::vector<ExactVar> vars;
    std::vector<int> card(candidates);
    std::vector<std::function<int(const std::vector<int>&)>> cand_fn(candidates);
    for (int c = 0; c < candidates; ++c) {
        card[c] = 2 + s.uniform(max_values - 1);
        const int slot = static_cast<int>(noise_sizes.size());
        noise_sizes.push_back(card[c]);
        // Occasionally correlate with an earlier candidate.
        if (c > 0 && s.coin(0.3)) {
            const int parent = s.uniform(c);
            auto parent_fn = cand_fn[parent];
            const int k = card[c];
            cand_fn[c] = [parent_fn, slot, k](const std::vector<int>& a) {
                return a[slot] == 0 ? parent_fn(a) % k : a[slot];
            };
        } else {
            cand_fn[c] = [slot](const std::vector<int>& a) { return a[slot]; };
        }
    }
    auto driver = [&](int levels) {
        std::vector<int> parents;
        for (int c = 0; c < candidates; ++c) {
            if (s.coin(0.5)) parents.push_back(c);
        }
        if (parents.empty()) parents.push_back(s.uniform(candidates));
        const int slot = static_cast<int>(noise_sizes.size());
        noise_sizes.push_back(2);
        std::map<std::vector<int>, int> lookup;
        std::vector<int> key(parents.size(), 0);
        std::vector<std::vector<int>> keys;
        std::function<void(std::size_t)> rec = [&](std::size_t i) {
            if (i == parents.size()) {
                keys.push_back(key);
                return;
            }
            for (int v = 0; v < card[parents[i]]; ++v) {
                key[i] = v;
                rec(i + 1);
            }
        };
        rec(0);
        for (const auto& k : keys) lookup[k] = s.uniform(levels);
        auto fns = cand_fn;
        return [fns, parents, lookup, slot, levels](const std::vector<int>& a) {
            std::vector<int> k;
            for (int p : parents) k.push_back(fns[p](a));
            const int base = lookup.at(k);
            return a[slot] == 0 ? base : (base + 1) % levels;
        };
    };
    auto t_fn = driver(3);
    auto o_fn = driver(3);
    vars.push_back({"O", o_fn});
    vars.push_back({"T", t_fn});
    for (int c = 0; c < candidates; ++c) vars.push_back({"E" + std::to_string(c + 1), cand_fn[c]});
    return exact_table(noise_sizes, vars);
}

// Missingness of E driven by an observed covariate X: P(R=1|X=0)=p0,
// P(R=1|X=1)=p1. Columns O, T, X, E (with holes) and E_full (complete).
inline Table covariate_missingness(std::size_t n, std::uint64_t seed, double p0 = 0.9, double p1 = 0.1) {
    Sampler s(seed);
    std::vector<int> o(n), t(n), x(n), e(n), full(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = s.uniform(2);
        full[i] = s.coin(0.6) ? x[i] : s.uniform(3);
        t[i] = s.coin(0.7) ? (full[i] + x[i]) % 2 : s.uniform(2);
        o[i] = s.coin(0.7) ? (x[i] ^ (full[i] == 2 ? 1 : 0)) : s.uniform(2);
        e[i] = s.coin(x[i] == 0 ? p0 : p1) ? full[i] : -1;
    }
    return make_table({{"O", o}, {"T", t}, {"X", x}, {"E", e}, {"E_full", full}}, "covariate_missing");
}

// ---------------------------------------------------------------------------
// Oracles

// Miller-Madow entropy straight from a count map.
inline double oracle_entropy(const std::map<std::vector<int>, double>& counts, double n) {
    double h = 0;
    for (const auto& [k, c] : counts) {
        const double p = c / n;
        h -= p * std::log(p) / std::numbers::ln2;
    }
    return h + (static_cast<double>(counts.size()) - 1.0) / (2.0 * n * std::numbers::ln2);
}

// I(x;y|z) recomputed from the explicit joint table of the contributing rows.
inline double oracle_cmi(const Table& t, const std::string& x, const std::string& y,
                         const std::vector<std::string>& z, const std::vector<std::uint32_t>& rows) {
    std::map<std::vector<int>, double> xz, yz, xyz, zz;
    double n = 0;
    for (auto r : rows) {
        auto get = [&](const std::string& name) {
            auto c = t.column(name).code(r);
            return c ? static_cast<int>(*c) : -1;
        };
        std::vector<int> zv;
        bool ok = get(x) >= 0 && get(y) >= 0;
        for (const auto& name : z) {
            zv.push_back(get(name));
            if (zv.back() < 0) ok = false;
        }
        if (!ok) continue;
        auto with = [&](std::vector<int> head) {
            head.insert(head.end(), zv.begin(), zv.end());
            return head;
        };
        xz[with({get(x)})] += 1;
        yz[with({get(y)})] += 1;
        xyz[with({get(x), get(y)})] += 1;
        zz[zv] += 1;
        n += 1;
    }
    const double v = oracle_entropy(xz, n) + oracle_entropy(yz, n) - oracle_entropy(xyz, n) - oracle_entropy(zz, n);
    return v > 0 ? v : 0.0;
}

}  // namespace fixtures
