#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "confex/dataset.hpp"
#include "confex/estimator.hpp"

namespace confex {

struct IpwConfig {
    double l2 = 1e-4;
    std::size_t max_iterations = 5000;
    double tolerance = 1e-9;  // on the largest gradient component
    double clip_low = 0.01;
    double clip_high = 0.99;
};

struct IpwDiagnostics {
    std::vector<std::string> features;  // "intercept", then "column=label"
    std::vector<double> coefficients;
    std::size_t iterations = 0;
    bool converged = false;
    std::size_t clipped = 0;        // fitted probabilities moved onto a clip bound
    std::size_t dropped_rows = 0;   // selection rows with a missing predictor
    std::size_t unadjusted_rows = 0;  // observed rows left at weight 1 for lack of predictors
    double observed_rate = 1.0;     // P(R = 1) on the fitting rows
};

// Inverse-probability weights P(R=1) / P(R=1 | x), one per table row; zero
// exactly where the target is missing.
struct WeightVector {
    std::vector<double> weights;
    std::string target_attr;
    double w_min = 0.0;
    double w_max = 0.0;
    IpwDiagnostics diagnostics;

    Weights span() const { return weights; }
};

// Fits a logistic model of the target's observation indicator on one-hot
// predictors. With no missing target cells every weight is 1.
WeightVector fit_ipw(const Table& table, std::string_view target, std::span<const std::string> predictors,
                     const RowSelection& selection, const IpwConfig& config = {});

// Same, for an arbitrary observation indicator (e.g. joint presence of two columns).
WeightVector fit_ipw_indicator(const Table& table, const std::vector<bool>& observed, std::string label,
                               std::span<const std::string> predictors, const RowSelection& selection,
                               const IpwConfig& config = {});

enum class RecoverabilityKind { cmi_query, pairwise_mi };

struct RecoverabilityTest {
    std::string condition;
    CiResult result;
};

struct RecoverabilityReport {
    std::string target;
    std::string partner;  // pairwise only
    RecoverabilityKind kind = RecoverabilityKind::cmi_query;
    std::vector<RecoverabilityTest> tests;
    bool recoverable = true;
};

// Observation indicator of a column as a 0/1 column named "R[<name>]".
Column observation_indicator(const Column& column);
Column observation_indicator(const std::vector<bool>& observed, std::string name);

// Whether complete-case estimates of I(O;T|C,e) are trustworthy: tests that
// e's observation indicator is independent of O, alone and given T, on the
// query rows.
RecoverabilityReport recoverable_cmi(const Table& table, const QuerySpec& query, std::string_view e,
                                     const CiTestConfig& config);

// Whether complete-case I(e_i; e_j) is trustworthy: each column must be
// independent of the joint observation indicator on the rows where it is
// observed.
RecoverabilityReport recoverable_pairwise(const Table& table, std::string_view e_i, std::string_view e_j,
                                          const CiTestConfig& config, const RowSelection* selection = nullptr);

struct MissingConfig {
    bool enabled = true;
    std::optional<std::vector<std::string>> predictors;  // default: see default_ipw_predictors
    std::uint32_t max_predictor_cardinality = 32;
    IpwConfig ipw;
};

// Input-table columns other than O, T, context columns and `exclude`, with
// at most `max_cardinality` levels.
std::vector<std::string> default_ipw_predictors(const Table& table, const QuerySpec& query,
                                                std::span<const std::string> exclude,
                                                std::uint32_t max_cardinality);

struct WeightSummary {
    double min = 0, max = 0, mean = 0, sum = 0;
    std::size_t nonzero = 0;
    std::size_t clipped = 0;
    bool converged = true;
};

WeightSummary summarize(const WeightVector& w, const RowSelection& rows);

struct AttributeMissingness {
    std::string attribute;
    std::string partner;
    RecoverabilityReport report;
    std::optional<WeightSummary> weights;
};

// Decides per estimation term whether complete-case counts suffice or IPW
// weights are needed, caching both the verdicts and the fitted weights.
// Safe to call from several threads.
class WeightPolicy {
public:
    WeightPolicy(const Table& table, const QuerySpec& query, const RowSelection& rows, CiTestConfig ci,
                 MissingConfig config);

    // Weights for I(O;T|C,e); empty when unweighted.
    Weights for_attribute(const std::string& e);
    // Weights for I(a;b); empty when unweighted.
    Weights for_pair(const std::string& a, const std::string& b);

    bool weighted(const std::string& e);
    std::vector<AttributeMissingness> diagnostics() const;

private:
    struct Entry {
        AttributeMissingness info;
        std::optional<WeightVector> weights;
    };

    const Table& table_;
    const QuerySpec& query_;
    const RowSelection& rows_;
    CiTestConfig ci_;
    MissingConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, Entry> single_;
    std::map<std::pair<std::string, std::string>, Entry> pairs_;
};

}  // namespace confex
