#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "confex/dataset.hpp"

namespace confex {

enum class Provenance { local_file, kg_endpoint };
const char* to_string(Provenance provenance);

// Key column plus text-valued attribute columns; typing happens at join time.
struct AttributeTable {
    std::string key_column = "key";
    std::vector<std::string> keys;
    std::vector<std::string> attributes;
    std::vector<std::vector<std::optional<std::string>>> cells;  // cells[attribute][row]
    Provenance provenance = Provenance::local_file;
    int hop = 1;

    std::size_t row_count() const noexcept { return keys.size(); }
    std::vector<std::string> duplicate_keys() const;
    // Shape checks only; duplicate keys are reported by join_attributes.
    void validate() const;
};

// First column is the key; header row required; an empty cell is missing.
AttributeTable read_attribute_table(const std::string& path);
AttributeTable parse_attribute_table(std::string_view text);
std::string format_attribute_table(const AttributeTable& table);
void write_attribute_table(const AttributeTable& table, const std::string& path);

// Left join on `on`. Base columns are copied unchanged; new columns take
// origin `acquired` and are typed by the ingestion rules. A new name that
// collides gets "__ext" (then "__ext2", ...).
Table join_attributes(const Table& base, const AttributeTable& attrs, std::string_view on,
                      const CsvOptions& typing = {});

// Key text of a base cell as join_attributes matches it.
std::string key_text(const Column& column, std::size_t row);

enum class AggTag { mean, sum, max, min, first, count };
const char* to_string(AggTag tag);
AggTag parse_agg_tag(std::string_view text);

struct AggSpec {
    std::map<std::string, AggTag> tags;
    AggTag fallback = AggTag::first;  // attributes without an entry

    AggTag tag_for(const std::string& attribute) const;
    // JSON object of attribute -> tag; the key "*" sets the fallback.
    static AggSpec from_json(std::string_view text);
};

struct RawTriple {
    std::string key;
    std::string attribute;
    std::string value;

    auto operator<=>(const RawTriple&) const = default;
};

// One row per key and one column per attribute, both in sorted order. `first`
// keeps the earliest value in input order.
AttributeTable aggregate_multivalue(const std::vector<RawTriple>& raw, const AggSpec& spec,
                                    std::string key_column = "key");

struct LinkMap {
    std::map<std::string, std::string> mapping;  // table label -> entity IRI
    std::vector<std::string> unmatched;
};

// label,entity rows after a header line.
std::map<std::string, std::string> read_alias_file(const std::string& path);

// Alias entries win; otherwise the label becomes prefix + label with spaces
// as underscores. Labels are unmatched when neither applies.
LinkMap build_link_map(const std::vector<std::string>& labels,
                       const std::map<std::string, std::string>& aliases,
                       const std::string& resource_prefix);

struct KgOptions {
    std::string endpoint;      // http(s)://host[:port]/path
    int hop = 1;               // 1 or 2
    double timeout_seconds = 10.0;
    std::string cache_dir;     // empty disables caching
    bool offline = false;
    std::size_t max_in_flight = 4;
    std::string language = "en";  // literals tagged with another language are skipped; empty keeps all
};

struct KgDiagnostic {
    std::string key;
    std::string entity;
    int hop = 1;
    std::string message;
};

struct KgResult {
    std::vector<RawTriple> triples;
    std::vector<KgDiagnostic> diagnostics;
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
};

std::string sparql_property_query(const std::string& entity);

// Cache file for one entity at one hop depth, relative to the cache root.
std::string kg_cache_path(const std::string& cache_dir, const std::string& entity, int hop);

// Per-entity SELECT ?p ?o. Attribute names are predicate local names; at
// hop 2 every IRI object is expanded and its attributes become "pred.subpred".
// Failures are recorded per entity and never abort the run.
KgResult fetch_kg(const LinkMap& entities, const KgOptions& options);

// Directory from CONFEX_CACHE_DIR, else ".confex-cache".
std::string default_cache_dir();

}  // namespace confex
