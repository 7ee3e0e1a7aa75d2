#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "confex/acquire.hpp"
#include "confex/dataset.hpp"
#include "confex/mcimr.hpp"
#include "confex/prune.hpp"
#include "confex/subgroups.hpp"

namespace confex {

inline constexpr const char* kToolName = "confex";
inline constexpr const char* kToolVersion = "0.1.0";

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

// Wall-clock timings in stage order.
class Profile {
public:
    void add(std::string stage, double seconds) { stages_.push_back({std::move(stage), seconds}); }
    const std::vector<StageTiming>& stages() const noexcept { return stages_; }
    double total() const;
    nlohmann::ordered_json to_json() const;

private:
    std::vector<StageTiming> stages_;
};

struct ExplainSettings {
    PruneConfig prune;
    McimrConfig mcimr;
    bool run_prune = true;
    std::optional<std::vector<std::string>> candidates;  // default: every non-query column
};

struct ExplainRun {
    QuerySpec query;
    std::vector<GroupRow> groups;
    std::vector<std::string> candidates;
    PruneReport prune;
    Explanation explanation;
    Profile profile;
};

// Group aggregate, offline then online pruning, and MCIMR on the survivors.
ExplainRun run_explain(const Table& table, const QuerySpec& query, const ExplainSettings& settings);

// Joins every attribute table on its key column.
Table join_all(Table base, const std::vector<AttributeTable>& attrs, const CsvOptions& typing = {});

// FNV-1a over the file contents in order, as 16 hex digits.
std::string input_hash(const std::vector<std::string>& paths);

std::string utc_timestamp();

nlohmann::ordered_json to_json(const QuerySpec& query, const Table& table);
nlohmann::ordered_json to_json(const std::vector<GroupRow>& groups);
nlohmann::ordered_json to_json(const PruneReport& report);
nlohmann::ordered_json to_json(const Explanation& explanation);
nlohmann::ordered_json to_json(const std::vector<AttributeMissingness>& missing);
nlohmann::ordered_json to_json(const SubgroupResult& result, const Table& table, std::size_t context_size);

// Config echo shared by every report.
nlohmann::ordered_json to_json(const ExplainSettings& settings);

}  // namespace confex
