#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "confex/dataset.hpp"
#include "confex/mcimr.hpp"

namespace confex {

// A context refinement C' ⊃ C: the query context plus extra equality predicates.
struct Refinement {
    std::vector<Predicate> predicates;  // query context first, then added predicates by column ordinal
    std::size_t added = 0;              // number of predicates beyond the query context
    std::size_t size = 0;               // rows matching every predicate
    double score = 0.0;                 // I(O;T|C',E); set once scored
    int frontier_index = -1;            // largest refinable ordinal used; -1 at the root
    std::vector<std::uint32_t> rows;    // matching rows, ascending
};

struct SubgroupConfig {
    std::size_t k = 5;
    std::optional<double> tau;  // default 0.1 * I(O;T|C)
    std::vector<std::string> refinable;
    std::size_t min_size = 30;

    void validate() const;
};

using RefinementScorer = std::function<double(const Refinement&)>;

struct SubgroupStats {
    std::size_t generated = 0;
    std::size_t scored = 0;
    std::size_t rescored = 0;  // predicate sets scored more than once; always 0
    std::vector<std::size_t> popped_sizes;
};

struct SubgroupResult {
    std::vector<Refinement> groups;
    double tau = 0.0;
    SubgroupStats stats;
};

Refinement root_refinement(const Table& table, const QuerySpec& query);

// Children extend `node` with one predicate on a refinable column whose
// ordinal exceeds node.frontier_index; groups below min_size are omitted.
std::vector<Refinement> gen_children(const Table& table, const Refinement& node, const SubgroupConfig& config);

// I(O;T|C',E) on the refinement's rows with O and T observed; 0 when nothing
// can be estimated there.
double refinement_score(const Table& table, const QuerySpec& query, const Refinement& node,
                        std::span<const std::string> explanation);

// Heap order: larger size first, then fewer predicates, then lexicographic.
bool pops_before(const Refinement& a, const Refinement& b);

// Largest refinements scoring above tau with no accepted ancestor. `scorer`
// defaults to refinement_score with the explanation's attributes.
SubgroupResult top_k_unexplained(const Table& table, const QuerySpec& query, const Explanation& explanation,
                                 const SubgroupConfig& config, RefinementScorer scorer = {});

// Columns other than O, T, context and explanation attributes with 2..max_cardinality levels.
std::vector<std::string> default_refinable(const Table& table, const QuerySpec& query,
                                           std::span<const std::string> explanation,
                                           std::uint32_t max_cardinality = 20);

}  // namespace confex
