#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "confex/error.hpp"
#include "confex/mcimr.hpp"
#include "confex/prune.hpp"
#include "support/fixtures.hpp"

using namespace confex;
using fixtures::make_table;
using fixtures::Sampler;

namespace {

QuerySpec ot_query() {
    QuerySpec q;
    q.outcome = "O";
    q.exposure = "T";
    return q;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Brute-force minimum of I(O;T|E) over all subsets of `cands` of size `k`.
double exhaustive_optimum(const Table& t, const std::vector<std::string>& cands, std::size_t k) {
    const auto rows = fixtures::all_rows(t);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::string> pick;
    std::function<void(std::size_t)> rec = [&](std::size_t from) {
        if (pick.size() == k) {
            best = std::min(best, fixtures::oracle_cmi(t, "O", "T", pick, rows));
            return;
        }
        for (std::size_t i = from; i < cands.size(); ++i) {
            pick.push_back(cands[i]);
            rec(i + 1);
            pick.pop_back();
        }
    };
    rec(0);
    return best;
}

}  // namespace

TEST_CASE("next_best_att examples") {
    const auto t = fixtures::planted_confounders(5000, 1);

    SUBCASE("planted confounder beats noise") {
        const std::vector<std::string> cands{"N1", "Z1"};
        CHECK(next_best_att(t, ot_query(), {}, cands).column == "Z1");
    }
    SUBCASE("a duplicate of a selected column is penalised by redundancy") {
        Table d = t;
        Column dup = t.column("Z1");
        dup.rename("Z1copy");
        d.add_column(dup);
        const std::vector<std::string> sel{"Z1"};
        const std::vector<std::string> cands{"Z1", "Z1copy", "Z2"};
        const auto c = next_best_att(d, ot_query(), sel, cands);
        CHECK(c.column == "Z2");

        // Brute-force criterion evaluation of the loser.
        const auto rows = fixtures::all_rows(d);
        const Column* z[] = {&d.column("Z1copy")};
        const double loser = cmi(d.column("O"), d.column("T"), z, rows) +
                             cmi(d.column("Z1copy"), d.column("Z1"), {}, rows);
        const Column* one[] = {&d.column("Z1")};
        CHECK(cmi(d.column("Z1copy"), d.column("Z1"), {}, rows) == doctest::Approx(joint_entropy(one, rows)));
        CHECK(c.criterion < loser);
    }
    SUBCASE("exact ties go to the smaller name") {
        Table d = t;
        Column a = t.column("Z2");
        a.rename("A");
        Column b = t.column("Z2");
        b.rename("B");
        d.add_column(b);
        d.add_column(a);
        const std::vector<std::string> cands{"B", "A"};
        CHECK(next_best_att(d, ot_query(), {}, cands).column == "A");
    }
    SUBCASE("no remaining candidates is an error") {
        const std::vector<std::string> cands{"Z1"};
        CHECK_THROWS_AS(next_best_att(t, ot_query(), cands, cands), Error);
        CHECK_THROWS_AS(next_best_att(t, ot_query(), {}, {}), Error);
    }
}

TEST_CASE("run_mcimr recovers planted confounders") {
    const auto t = fixtures::planted_confounders(5000, 2);
    const auto cands = default_candidates(t, ot_query());
    const auto e = run_mcimr(t, ot_query(), cands);
    CHECK(sorted(e.selected) == std::vector<std::string>{"Z1", "Z2"});
    CHECK(e.explainability < 0.1 * e.baseline);
    CHECK(e.baseline == doctest::Approx(fixtures::oracle_cmi(t, "O", "T", {}, fixtures::all_rows(t))));
    REQUIRE(e.trace.size() == 3);
    CHECK_FALSE(e.trace.back().accepted);
    CHECK(e.trace.back().stop_test.independent());
    CHECK(e.responsibility.defined);
    double sum = 0;
    for (const auto& [k, v] : e.responsibility.values) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    CHECK(e.weighted_attrs.empty());
}

TEST_CASE("run_mcimr degenerate inputs") {
    const auto t = fixtures::planted_confounders(2000, 3);
    SUBCASE("no candidates") {
        const auto e = run_mcimr(t, ot_query(), {});
        CHECK(e.selected.empty());
        CHECK(e.explainability == e.baseline);
        CHECK_FALSE(e.responsibility.defined);
    }
    SUBCASE("k = 1 picks the single-attribute minimiser") {
        McimrConfig cfg;
        cfg.k = 1;
        const auto cands = default_candidates(t, ot_query());
        const auto e = run_mcimr(t, ot_query(), cands, cfg);
        REQUIRE(e.selected.size() == 1);
        std::string best;
        double best_v = 1e9;
        for (const auto& c : cands) {
            const double v = fixtures::oracle_cmi(t, "O", "T", {c}, fixtures::all_rows(t));
            if (v < best_v) {
                best_v = v;
                best = c;
            }
        }
        CHECK(e.selected[0] == best);
        CHECK(e.explainability == doctest::Approx(best_v).epsilon(1e-9));
        CHECK(e.responsibility.values.at(best) == 1.0);
    }
    SUBCASE("query columns are not candidates") {
        const std::vector<std::string> bad{"O"};
        CHECK_THROWS_AS(run_mcimr(t, ot_query(), bad), Error);
        McimrConfig cfg;
        cfg.k = 0;
        CHECK_THROWS_AS(run_mcimr(t, ot_query(), {}, cfg), Error);
    }
}

TEST_CASE("responsibility examples") {
    SUBCASE("two contributing attributes") {
        const auto r = responsibility({{"E1", 1.51}, {"E2", 1.3}}, 0.03);
        REQUIRE(r.defined);
        CHECK(r.values.at("E1") == doctest::Approx(0.54).epsilon(0.01));
        CHECK(r.values.at("E2") == doctest::Approx(0.46).epsilon(0.01));
    }
    SUBCASE("an attribute with negative interaction information") {
        const auto r = responsibility({{"E1", 2.7}, {"E5", 1.3}}, 1.5);
        REQUIRE(r.defined);
        CHECK(r.values.at("E1") == doctest::Approx(1.2));
        CHECK(r.values.at("E5") == doctest::Approx(-0.2));
    }
    SUBCASE("single attribute") {
        const auto r = responsibility({{"E", 0.8}}, 0.1);
        CHECK(r.values.at("E") == 1.0);
    }
    SUBCASE("non-positive denominator is undefined, not a crash") {
        const auto r = responsibility({{"E1", 0.5}, {"E2", 0.5}}, 0.7);
        CHECK_FALSE(r.defined);
        CHECK(r.values.empty());
        CHECK_FALSE(r.diagnostic.empty());
    }
    SUBCASE("invalid input") {
        CHECK_THROWS_AS(responsibility({}, 0.1), Error);
        CHECK_THROWS_AS(responsibility({{"E", -0.1}}, 0.0), Error);
    }
}

TEST_CASE("criterion_components examples") {
    Sampler s(4);
    const std::size_t n = 20000;
    std::vector<int> o(n), t(n), a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = s.uniform(3);
        b[i] = s.uniform(4);
        t[i] = s.coin(0.7) ? a[i] % 2 : s.uniform(2);
        o[i] = s.coin(0.7) ? t[i] : s.uniform(2);
    }
    const auto tab = make_table({{"O", o}, {"T", t}, {"A", a}, {"B", b}, {"A2", a}});
    const auto rows = fixtures::all_rows(tab);
    const Column* ca[] = {&tab.column("A")};
    const Column* cb[] = {&tab.column("B")};
    const double ha = joint_entropy(ca, rows);
    const double hb = joint_entropy(cb, rows);

    const std::vector<std::string> single{"A"}, pair{"A", "B"}, dup{"A", "A2"};
    const auto c1 = criterion_components(tab, ot_query(), single);
    CHECK(c1.ci == doctest::Approx(cmi(tab.column("O"), tab.column("T"), ca, rows)));
    CHECK(c1.rd == doctest::Approx(ha));
    CHECK(criterion_components(tab, ot_query(), pair).rd == doctest::Approx((ha + hb) / 4).epsilon(0.01));
    CHECK(criterion_components(tab, ot_query(), dup).rd == doctest::Approx(ha));
    CHECK_THROWS_AS(criterion_components(tab, ot_query(), {}), Error);
}

TEST_CASE("greedy properties on planted fixtures") {
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
        const auto t = fixtures::planted_confounders(3000, seed);
        const auto cands = default_candidates(t, ot_query());
        McimrConfig cfg;
        const auto e = run_mcimr(t, ot_query(), cands, cfg);

        // Explainability never increases across accepted steps.
        double prev = e.baseline;
        for (const auto& s : e.trace) {
            if (!s.accepted) continue;
            CHECK(s.explainability <= prev + 1e-12);
            prev = s.explainability;
        }
        // Work bound: at most k scans of the candidate list.
        CHECK(e.candidates_examined() <= cfg.k * cands.size());
        CHECK(e.selected.size() <= cfg.k);
        CHECK(e.explainability >= 0.0);

        // Determinism, also across thread counts.
        cfg.threads = 3;
        const auto again = run_mcimr(t, ot_query(), cands, cfg);
        CHECK(again.selected == e.selected);
        CHECK(again.explainability == e.explainability);
        REQUIRE(again.trace.size() == e.trace.size());
        for (std::size_t i = 0; i < e.trace.size(); ++i) {
            CHECK(again.trace[i].chosen == e.trace[i].chosen);
            CHECK(again.trace[i].criterion == e.trace[i].criterion);
        }
    }
}

TEST_CASE("selection is invariant to relabelling candidate values") {
    for (std::uint64_t seed = 30; seed < 36; ++seed) {
        const auto t = fixtures::planted_confounders(3000, seed);
        const auto cands = default_candidates(t, ot_query());
        const auto base = run_mcimr(t, ot_query(), cands);

        Sampler s(seed);
        Table r("relabelled");
        for (const auto& c : t.columns()) {
            if (c.name() == "O" || c.name() == "T") {
                r.add_column(c);
                continue;
            }
            std::vector<std::uint32_t> perm(c.cardinality());
            for (std::uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
            std::shuffle(perm.begin(), perm.end(), s.rng());
            auto codes = c.codes();
            for (auto& code : codes) {
                if (code != Column::kMissing) code = perm[code];
            }
            std::vector<std::string> labels(c.cardinality());
            for (std::uint32_t i = 0; i < perm.size(); ++i) labels[i] = "v" + std::to_string(i);
            r.add_column(Column::from_codes(c.name(), codes, labels));
        }
        const auto moved = run_mcimr(r, ot_query(), cands);
        CHECK(moved.selected == base.selected);
    }
}

TEST_CASE("greedy stays close to the exhaustive optimum on exact tables") {
    int close = 0;
    const int trials = 30;
    for (int seed = 0; seed < trials; ++seed) {
        const auto t = fixtures::random_exact_fixture(static_cast<std::uint64_t>(seed), 5, 3);
        const auto cands = default_candidates(t, ot_query());
        McimrConfig cfg;
        cfg.k = 2;
        cfg.stop_on_independence = false;
        const auto e = run_mcimr(t, ot_query(), cands, cfg);
        REQUIRE(e.selected.size() == 2);
        const double greedy = e.explainability * 2;
        const double best = exhaustive_optimum(t, cands, 2) * 2;
        if (greedy <= 1.1 * best + 1e-12) ++close;
    }
    CHECK(close >= trials * 9 / 10);
}

TEST_CASE("responsibility test is sound on exact tables") {
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto t = fixtures::random_exact_fixture(seed, 4, 3);
        const auto cands = default_candidates(t, ot_query());
        const auto e = run_mcimr(t, ot_query(), cands);
        const auto rows = fixtures::all_rows(t);
        std::vector<const Column*> prefix;
        for (const auto& step : e.trace) {
            if (step.stop_test.independent()) {
                auto with = prefix;
                with.push_back(&t.column(step.chosen));
                const double before = cmi(t.column("O"), t.column("T"), prefix, rows);
                const auto after = cmi_terms(t.column("O"), t.column("T"), with, rows);
                CHECK(before - after.value() <= 2 * after.max_correction());
                ++checked;
            }
            if (step.accepted) prefix.push_back(&t.column(step.chosen));
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("run_mcimr weights attributes whose missingness is not recoverable") {
    const auto t = fixtures::covariate_missingness(5000, 8, 0.95, 0.2);
    McimrConfig cfg;
    cfg.k = 1;
    cfg.missing.predictors = std::vector<std::string>{"X"};
    const std::vector<std::string> cands{"E", "X"};
    const auto e = run_mcimr(t, ot_query(), cands, cfg);
    bool e_weighted = std::find(e.weighted_attrs.begin(), e.weighted_attrs.end(), "E") != e.weighted_attrs.end();
    bool e_listed = false;
    for (const auto& m : e.missing) {
        if (m.attribute == "E") {
            e_listed = true;
            CHECK(m.weights.has_value() == !m.report.recoverable);
            CHECK(e_weighted == !m.report.recoverable);
        }
    }
    CHECK(e_listed);

    cfg.missing.enabled = false;
    const auto plain = run_mcimr(t, ot_query(), cands, cfg);
    CHECK(plain.weighted_attrs.empty());
    CHECK(plain.missing.empty());
}

TEST_CASE("attributes never observed on the query rows are set aside") {
    auto t = fixtures::planted_confounders(1000, 5);
    t.add_column(fixtures::int_column("Ghost", std::vector<int>(1000, -1)));
    const std::vector<std::string> cands{"Ghost", "Z1", "Z2"};
    const auto e = run_mcimr(t, ot_query(), cands);
    CHECK(e.unusable == std::vector<std::string>{"Ghost"});
    CHECK(std::find(e.selected.begin(), e.selected.end(), "Ghost") == e.selected.end());
}
