#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "confex/dataset.hpp"

namespace confex {

// Empirical joint distribution of a column set over a row selection. Only
// observed tuples are stored; counts are weight sums when weights are given.
struct FrequencyTable {
    std::vector<std::string> columns;
    std::vector<std::pair<std::vector<std::uint32_t>, double>> cells;  // sorted by tuple
    double total = 0.0;
    double effective_n = 0.0;  // Kish effective sample size; equals total when unweighted

    std::size_t distinct() const noexcept { return cells.size(); }
    double count(const std::vector<std::uint32_t>& tuple) const;
};

// Per-row weights indexed by table row. An empty span means unweighted.
using Weights = std::span<const double>;

FrequencyTable build_freq(const Table& table, std::span<const std::string> cols,
                          const RowSelection& selection, Weights weights = {});

// (m - 1) / (2 n ln 2), in bits.
double mm_correction(std::size_t distinct, double effective_n);

double entropy_plugin(const FrequencyTable& freq);
// Miller-Madow estimate in bits, clamped at zero.
double entropy_mm(const FrequencyTable& freq);

// Column-level estimators. `rows` is the candidate row set; rows missing any
// involved column (or carrying zero weight) are dropped once for all terms.
using ColumnRefs = std::span<const Column* const>;

double joint_entropy(ColumnRefs cols, std::span<const std::uint32_t> rows, Weights weights = {});
double conditional_entropy(const Column& x, ColumnRefs given, std::span<const std::uint32_t> rows,
                           Weights weights = {});
double cmi(const Column& x, const Column& y, ColumnRefs z, std::span<const std::uint32_t> rows,
           Weights weights = {});

// The four Miller-Madow terms behind one CMI evaluation.
struct CmiTerms {
    double h_xz = 0, h_yz = 0, h_xyz = 0, h_z = 0;
    std::size_t m_xz = 0, m_yz = 0, m_xyz = 0, m_z = 0;
    double effective_n = 0;
    std::size_t rows_used = 0;

    // H(x|z) + H(y|z) - H(x,y|z): exactly 0 when x or y is a function of z.
    double raw() const noexcept { return ((h_xz - h_z) + (h_yz - h_z)) - (h_xyz - h_z); }
    double value() const noexcept { return raw() > 0.0 ? raw() : 0.0; }
    // Largest single bias-correction term, i.e. that of the finest partition.
    double max_correction() const { return mm_correction(m_xyz, effective_n); }
};

CmiTerms cmi_terms(const Column& x, const Column& y, ColumnRefs z, std::span<const std::uint32_t> rows,
                   Weights weights = {});

// Table-level conveniences addressing columns by name.
double cmi(const Table& table, std::string_view x, std::string_view y, std::span<const std::string> z,
           const RowSelection& selection, Weights weights = {});
double conditional_entropy(const Table& table, std::string_view x, std::span<const std::string> given,
                           const RowSelection& selection, Weights weights = {});

struct CiTestConfig {
    double epsilon = 0.01;         // bits
    std::size_t permutations = 0;  // 0 disables the permutation test
    double alpha = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class CiVerdict { independent, dependent };

const char* to_string(CiVerdict verdict);

struct CiResult {
    CiVerdict verdict = CiVerdict::dependent;
    double cmi = 0.0;
    std::optional<double> p_value;  // set when permutations ran

    bool independent() const noexcept { return verdict == CiVerdict::independent; }
};

// Independent iff the CMI is at most epsilon, or the share of z-stratified
// permutations of x reaching the observed CMI exceeds alpha.
CiResult ci_test(const Column& x, const Column& y, ColumnRefs z, std::span<const std::uint32_t> rows,
                 Weights weights, const CiTestConfig& config);

CiResult ci_test(const Table& table, std::string_view x, std::string_view y, std::span<const std::string> z,
                 const RowSelection& selection, Weights weights, const CiTestConfig& config);

// Resolves column names to pointers into `table`.
std::vector<const Column*> column_refs(const Table& table, std::span<const std::string> names);

}  // namespace confex
