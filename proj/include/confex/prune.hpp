#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "confex/dataset.hpp"
#include "confex/estimator.hpp"

namespace confex {

enum class PruneRule { constant, too_missing, high_entropy, logical_dep_T, logical_dep_O, low_relevance };

// Tag used in reports: "constant", "too-missing", ...
const char* to_string(PruneRule rule);

struct PruneConfig {
    double max_missing_frac = 0.9;
    double high_entropy_frac = 0.9;
    double fd_epsilon = 0.05;  // bits
    CiTestConfig ci_config;
    std::size_t threads = 1;

    void validate() const;
};

struct PrunedColumn {
    std::string column;
    PruneRule rule = PruneRule::constant;
    double value = 0.0;  // missing fraction, distinct ratio, conditional entropy or CMI
};

struct PruneReport {
    std::vector<PrunedColumn> dropped;
    std::vector<std::string> kept;

    bool was_dropped(std::string_view column) const;
    // Appends `later`, which must have been run on this report's kept set.
    void chain(const PruneReport& later);
};

// Query-independent filters: too-missing, constant, then high-entropy.
PruneReport prune_offline(const Table& table, std::span<const std::string> candidates, const PruneConfig& config);

// Query-specific filters on the query rows: functional dependence with T,
// then with O, then low relevance to O.
PruneReport prune_online(const Table& table, std::span<const std::string> candidates, const QuerySpec& query,
                         const PruneConfig& config);

// Every column other than O, T and the context columns.
std::vector<std::string> default_candidates(const Table& table, const QuerySpec& query);

}  // namespace confex
