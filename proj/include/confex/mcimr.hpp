#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "confex/dataset.hpp"
#include "confex/estimator.hpp"
#include "confex/missing.hpp"

namespace confex {

struct McimrConfig {
    std::size_t k = 5;
    CiTestConfig ci_config;
    // Alg. stop rule: end the search once O is independent of the next pick.
    bool stop_on_independence = true;
    std::size_t threads = 1;
    MissingConfig missing;

    void validate() const;
};

struct TraceStep {
    std::string chosen;
    double criterion = 0.0;
    double cmi = 0.0;         // I(O;T|C,E) for the chosen E
    double redundancy = 0.0;  // mean I(E;E_i) over the selected set
    std::size_t candidates_examined = 0;
    CiResult stop_test;       // O vs chosen given the selected set
    bool accepted = false;
    double explainability = 0.0;  // I(O;T|C,E) after accepting; unset when rejected
};

struct Responsibility {
    std::map<std::string, double> values;
    bool defined = false;
    std::string diagnostic;
};

struct Explanation {
    std::vector<std::string> selected;
    double baseline = 0.0;        // I(O;T|C)
    double explainability = 0.0;  // I(O;T|C,E)
    std::map<std::string, double> leave_one_out;
    Responsibility responsibility;
    std::vector<TraceStep> trace;
    std::vector<std::string> weighted_attrs;
    std::vector<std::string> unusable;  // candidates never observed on the query rows
    std::vector<AttributeMissingness> missing;

    std::size_t candidates_examined() const;
};

struct Choice {
    std::string column;
    double criterion = 0.0;
    double cmi = 0.0;
    double redundancy = 0.0;
};

// Minimiser of I(O;T|C,E) + (1/|selected|) Σ I(E;E_i) over candidates not yet
// selected; ties go to the smaller name. `policy` may be null (unweighted).
Choice next_best_att(const Table& table, const QuerySpec& query, std::span<const std::string> selected,
                     std::span<const std::string> candidates, WeightPolicy* policy = nullptr,
                     std::size_t threads = 1);

Explanation run_mcimr(const Table& table, const QuerySpec& query, std::span<const std::string> candidates,
                      const McimrConfig& config = {});

// Resp(E_i) = (I_wo(E_i) - I_full) / Σ_j (I_wo(E_j) - I_full).
Responsibility responsibility(const std::map<std::string, double>& cmi_leave_one_out, double cmi_full);

struct CriterionComponents {
    double ci = 0.0;  // mean I(O;T|C,E)
    double rd = 0.0;  // (1/k²) Σ_{i,j} I(E_i;E_j), diagonal I(E;E) = H(E)
};

CriterionComponents criterion_components(const Table& table, const QuerySpec& query,
                                         std::span<const std::string> subset);

}  // namespace confex
