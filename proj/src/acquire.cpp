#include "confex/acquire.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "confex/csv.hpp"
#include "confex/error.hpp"
#include "confex/parallel.hpp"
#include "confex/text.hpp"

namespace confex {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Provenance provenance) {
    return provenance == Provenance::kg_endpoint ? "kg-endpoint" : "local-file";
}

std::vector<std::string> AttributeTable::duplicate_keys() const {
    std::map<std::string, std::size_t> seen;
    for (const auto& k : keys) ++seen[k];
    std::vector<std::string> out;
    for (const auto& [k, n] : seen) {
        if (n > 1) out.push_back(k);
    }
    return out;
}

void AttributeTable::validate() const {
    if (key_column.empty()) throw Error(ErrorKind::validation, "acquire", "attribute table has no key column name");
    if (cells.size() != attributes.size())
        throw Error(ErrorKind::validation, "acquire", "attribute table has mismatched attribute columns");
    for (std::size_t a = 0; a < attributes.size(); ++a) {
        if (cells[a].size() != keys.size())
            throw Error(ErrorKind::validation, "acquire", "attribute '" + attributes[a] + "' has the wrong row count");
    }
    std::set<std::string> names{key_column};
    for (const auto& a : attributes) {
        if (a.empty()) throw Error(ErrorKind::validation, "acquire", "empty attribute name");
        if (!names.insert(a).second) throw Error(ErrorKind::validation, "acquire", "duplicate attribute '" + a + "'");
    }
}

AttributeTable parse_attribute_table(std::string_view text) {
    const auto records = csv::parse(text);
    if (records.empty()) throw Error(ErrorKind::parse, "acquire", "attribute table has no header row");
    const auto& header = records.front();
    AttributeTable out;
    out.key_column = header.front();
    out.attributes.assign(header.begin() + 1, header.end());
    out.cells.assign(out.attributes.size(), {});
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != header.size())
            throw Error(ErrorKind::parse, "acquire",
                        "attribute table row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                            " fields, expected " + std::to_string(header.size()));
        if (rec.front().empty())
            throw Error(ErrorKind::parse, "acquire", "attribute table row " + std::to_string(r + 1) + " has an empty key");
        out.keys.push_back(rec.front());
        for (std::size_t a = 0; a < out.attributes.size(); ++a) {
            const auto& cell = rec[a + 1];
            out.cells[a].push_back(cell.empty() ? std::nullopt : std::optional<std::string>(cell));
        }
    }
    out.validate();
    return out;
}

AttributeTable read_attribute_table(const std::string& path) {
    auto t = parse_attribute_table(csv::read_file(path));
    t.provenance = Provenance::local_file;
    return t;
}

std::string format_attribute_table(const AttributeTable& table) {
    table.validate();
    std::string out;
    csv::Record header{table.key_column};
    header.insert(header.end(), table.attributes.begin(), table.attributes.end());
    out += csv::format_record(header);
    out += '\n';
    for (std::size_t r = 0; r < table.keys.size(); ++r) {
        csv::Record rec{table.keys[r]};
        for (const auto& col : table.cells) rec.push_back(col[r].value_or(""));
        out += csv::format_record(rec);
        out += '\n';
    }
    return out;
}

namespace {

void write_atomically(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000) + "-" +
           std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "acquire", "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw Error(ErrorKind::io, "acquire", "write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorKind::io, "acquire", "cannot move cache file into place: " + path.string());
    }
}

}  // namespace

void write_attribute_table(const AttributeTable& table, const std::string& path) {
    write_atomically(path, format_attribute_table(table));
}

std::string key_text(const Column& column, std::size_t row) {
    const auto code = column.code(row);
    if (!code) return {};
    if (column.kind() == ColumnKind::binned_numeric) {
        if (auto v = column.numeric_value(row)) return text::format_number(*v);
    }
    return column.label(*code);
}

Table join_attributes(const Table& base, const AttributeTable& attrs, std::string_view on, const CsvOptions& typing) {
    attrs.validate();
    if (!base.has_column(on))
        throw Error(ErrorKind::validation, "acquire", "join column '" + std::string(on) + "' not in table");
    if (const auto dups = attrs.duplicate_keys(); !dups.empty())
        throw Error(ErrorKind::validation, "acquire",
                    "attribute table has duplicate key '" + dups.front() + "'; aggregate it first");

    std::map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < attrs.keys.size(); ++r) index.emplace(attrs.keys[r], r);

    const Column& key = base.column(on);
    std::vector<std::optional<std::size_t>> match(base.row_count());
    for (std::size_t r = 0; r < base.row_count(); ++r) {
        if (key.is_missing(r)) continue;
        if (auto it = index.find(key_text(key, r)); it != index.end()) match[r] = it->second;
    }

    Table out(base.name());
    std::set<std::string> taken;
    for (const auto& c : base.columns()) {
        out.add_column(c);
        taken.insert(c.name());
    }
    for (std::size_t a = 0; a < attrs.attributes.size(); ++a) {
        std::string name = attrs.attributes[a];
        if (taken.count(name)) {
            std::string candidate = name + "__ext";
            for (int i = 2; taken.count(candidate); ++i) candidate = name + "__ext" + std::to_string(i);
            name = candidate;
        }
        taken.insert(name);
        std::vector<std::optional<std::string>> cells(base.row_count());
        for (std::size_t r = 0; r < base.row_count(); ++r) {
            if (match[r]) cells[r] = attrs.cells[a][*match[r]];
        }
        Column col = column_from_cells(name, cells, typing);
        col.set_origin(ColumnOrigin::acquired);
        out.add_column(std::move(col));
    }
    return out;
}

const char* to_string(AggTag tag) {
    switch (tag) {
        case AggTag::mean: return "mean";
        case AggTag::sum: return "sum";
        case AggTag::max: return "max";
        case AggTag::min: return "min";
        case AggTag::first: return "first";
        case AggTag::count: return "count";
    }
    return "first";
}

AggTag parse_agg_tag(std::string_view text) {
    const std::string t = text::to_lower(text::trim(text));
    for (AggTag tag : {AggTag::mean, AggTag::sum, AggTag::max, AggTag::min, AggTag::first, AggTag::count}) {
        if (t == to_string(tag)) return tag;
    }
    throw Error(ErrorKind::validation, "acquire", "unknown aggregation '" + std::string(text) + "'");
}

AggTag AggSpec::tag_for(const std::string& attribute) const {
    auto it = tags.find(attribute);
    return it == tags.end() ? fallback : it->second;
}

AggSpec AggSpec::from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, "acquire", std::string("aggregation spec is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::parse, "acquire", "aggregation spec must be a JSON object");
    AggSpec spec;
    for (const auto& [attr, tag] : doc.items()) {
        if (!tag.is_string())
            throw Error(ErrorKind::parse, "acquire", "aggregation for '" + attr + "' must be a string");
        const AggTag t = parse_agg_tag(tag.get<std::string>());
        if (attr == "*")
            spec.fallback = t;
        else
            spec.tags[attr] = t;
    }
    return spec;
}

namespace {

std::string aggregate(const std::string& attribute, AggTag tag, const std::vector<std::string>& values) {
    if (tag == AggTag::first) return values.front();
    if (tag == AggTag::count) return std::to_string(values.size());
    std::vector<double> nums;
    nums.reserve(values.size());
    for (const auto& v : values) {
        auto x = text::parse_number(v);
        if (!x)
            throw Error(ErrorKind::validation, "acquire",
                        std::string("aggregation '") + to_string(tag) + "' on attribute '" + attribute +
                            "' needs numbers, got '" + v + "'");
        nums.push_back(*x);
    }
    // Sorting first makes sum and mean independent of input order.
    std::sort(nums.begin(), nums.end());
    double acc = 0.0;
    switch (tag) {
        case AggTag::max: return text::format_number(nums.back());
        case AggTag::min: return text::format_number(nums.front());
        case AggTag::sum:
        case AggTag::mean:
            for (double x : nums) acc += x;
            if (tag == AggTag::mean) acc /= static_cast<double>(nums.size());
            return text::format_number(acc);
        default: break;
    }
    return values.front();
}

}  // namespace

AttributeTable aggregate_multivalue(const std::vector<RawTriple>& raw, const AggSpec& spec, std::string key_column) {
    std::map<std::string, std::map<std::string, std::vector<std::string>>> grouped;  // attribute -> key -> values
    std::set<std::string> keys;
    for (const auto& t : raw) {
        if (t.key.empty()) throw Error(ErrorKind::validation, "acquire", "raw triple with empty key");
        if (t.attribute.empty()) throw Error(ErrorKind::validation, "acquire", "raw triple with empty attribute");
        keys.insert(t.key);
        grouped[t.attribute][t.key].push_back(t.value);
    }
    AttributeTable out;
    out.key_column = std::move(key_column);
    out.keys.assign(keys.begin(), keys.end());
    for (const auto& [attr, by_key] : grouped) {
        if (attr == out.key_column)
            throw Error(ErrorKind::validation, "acquire", "attribute '" + attr + "' clashes with the key column");
        const AggTag tag = spec.tag_for(attr);
        std::vector<std::optional<std::string>> col;
        col.reserve(out.keys.size());
        for (const auto& k : out.keys) {
            auto it = by_key.find(k);
            if (it == by_key.end())
                col.emplace_back();
            else
                col.emplace_back(aggregate(attr, tag, it->second));
        }
        out.attributes.push_back(attr);
        out.cells.push_back(std::move(col));
    }
    out.validate();
    return out;
}

std::map<std::string, std::string> read_alias_file(const std::string& path) {
    const auto records = csv::parse(csv::read_file(path));
    std::map<std::string, std::string> out;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != 2)
            throw Error(ErrorKind::parse, "acquire", "alias file row " + std::to_string(r + 1) + " needs label,entity");
        if (!out.emplace(rec[0], rec[1]).second)
            throw Error(ErrorKind::parse, "acquire", "alias file lists '" + rec[0] + "' twice");
    }
    return out;
}

LinkMap build_link_map(const std::vector<std::string>& labels, const std::map<std::string, std::string>& aliases,
                       const std::string& resource_prefix) {
    LinkMap out;
    std::set<std::string> distinct(labels.begin(), labels.end());
    for (const auto& label : distinct) {
        if (label.empty()) continue;
        if (auto it = aliases.find(label); it != aliases.end()) {
            out.mapping.emplace(label, it->second);
        } else if (!resource_prefix.empty()) {
            std::string local = label;
            std::replace(local.begin(), local.end(), ' ', '_');
            out.mapping.emplace(label, resource_prefix + local);
        } else {
            out.unmatched.push_back(label);
        }
    }
    return out;
}

std::string sparql_property_query(const std::string& entity) {
    return "SELECT ?p ?o WHERE { <" + entity + "> ?p ?o }";
}

namespace {

std::string local_name(const std::string& iri) {
    const auto cut = iri.find_last_of("/#");
    std::string out = cut == std::string::npos ? iri : iri.substr(cut + 1);
    return out.empty() ? iri : out;
}

std::string safe_file_stem(const std::string& s) {
    std::string out;
    for (char c : local_name(s)) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                        c == '_';
        out.push_back(ok ? c : '_');
        if (out.size() >= 48) break;
    }
    return out;
}

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorKind::validation, "acquire", "endpoint must start with http:// or https://: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

struct Binding {
    std::string predicate;
    std::string value;
    bool is_iri = false;
};

// Throws parse errors on anything that is not a SPARQL JSON result with ?p and ?o.
std::vector<Binding> parse_bindings(const std::string& body, const std::string& language) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, "acquire", std::string("response is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("results") || !doc["results"].is_object() ||
        !doc["results"].contains("bindings") || !doc["results"]["bindings"].is_array())
        throw Error(ErrorKind::parse, "acquire", "response lacks results.bindings");
    std::vector<Binding> out;
    for (const auto& b : doc["results"]["bindings"]) {
        if (!b.is_object() || !b.contains("p") || !b.contains("o"))
            throw Error(ErrorKind::parse, "acquire", "binding lacks ?p or ?o");
        const auto& p = b["p"];
        const auto& o = b["o"];
        if (!p.is_object() || !o.is_object() || !p.contains("value") || !o.contains("value") ||
            !p["value"].is_string() || !o["value"].is_string())
            throw Error(ErrorKind::parse, "acquire", "binding values must be strings");
        const std::string type = o.value("type", "literal");
        if (type == "literal" || type == "typed-literal") {
            const std::string lang = o.value("xml:lang", "");
            if (!language.empty() && !lang.empty() && lang != language) continue;
        }
        out.push_back({p["value"].get<std::string>(), o["value"].get<std::string>(), type == "uri"});
    }
    return out;
}

struct FetchOutcome {
    std::vector<Binding> bindings;
    std::optional<std::string> error;
    bool from_cache = false;
    bool requested = false;
};

FetchOutcome fetch_entity(const std::string& entity, int hop, const KgOptions& options) {
    FetchOutcome out;
    const std::string cache = options.cache_dir.empty() ? std::string{} : kg_cache_path(options.cache_dir, entity, hop);
    if (!cache.empty() && fs::exists(cache)) {
        try {
            out.bindings = parse_bindings(csv::read_file(cache), options.language);
            out.from_cache = true;
            return out;
        } catch (const Error& e) {
            if (options.offline) {
                out.error = "unreadable cache entry: " + std::string(e.what());
                return out;
            }
        }
    }
    if (options.offline) {
        out.error = "not in cache (offline)";
        return out;
    }
    if (options.endpoint.empty()) {
        out.error = "no endpoint configured";
        return out;
    }
    try {
        const Endpoint ep = split_endpoint(options.endpoint);
        httplib::Client client(ep.origin);
        const auto secs = static_cast<time_t>(options.timeout_seconds);
        const auto usecs = static_cast<time_t>((options.timeout_seconds - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_follow_location(true);
        httplib::Params params{{"query", sparql_property_query(entity)}, {"format", "application/sparql-results+json"}};
        httplib::Headers headers{{"Accept", "application/sparql-results+json"}};
        out.requested = true;
        auto res = client.Get(ep.path, params, headers);
        if (!res) {
            out.error = "request failed: " + httplib::to_string(res.error());
            return out;
        }
        if (res->status != 200) {
            out.error = "HTTP status " + std::to_string(res->status);
            return out;
        }
        out.bindings = parse_bindings(res->body, options.language);
        if (!cache.empty()) write_atomically(cache, res->body);
    } catch (const Error& e) {
        out.error = e.what();
        out.bindings.clear();
    } catch (const std::exception& e) {
        out.error = e.what();
        out.bindings.clear();
    }
    return out;
}

}  // namespace

std::string kg_cache_path(const std::string& cache_dir, const std::string& entity, int hop) {
    const std::string name = safe_file_stem(entity) + "-" + text::hex64(text::fnv1a64(entity)).substr(0, 12) + ".json";
    return (fs::path(cache_dir) / ("hop" + std::to_string(hop)) / name).string();
}

KgResult fetch_kg(const LinkMap& entities, const KgOptions& options) {
    if (options.hop != 1 && options.hop != 2)
        throw Error(ErrorKind::validation, "acquire", "hop must be 1 or 2");
    if (!(options.timeout_seconds > 0.0))
        throw Error(ErrorKind::validation, "acquire", "timeout must be positive");
    if (!options.offline && !options.endpoint.empty()) split_endpoint(options.endpoint);

    KgResult result;
    const std::size_t limit = std::max<std::size_t>(1, options.max_in_flight);

    std::vector<std::pair<std::string, std::string>> firsts(entities.mapping.begin(), entities.mapping.end());
    std::vector<FetchOutcome> outcomes(firsts.size());
    parallel_for(firsts.size(), limit, [&](std::size_t i) { outcomes[i] = fetch_entity(firsts[i].second, 1, options); });

    // Second-hop objects, each fetched once even when several entities link to it.
    std::vector<std::string> objects;
    std::map<std::string, std::size_t> object_index;
    if (options.hop == 2) {
        for (const auto& o : outcomes) {
            for (const auto& b : o.bindings) {
                if (b.is_iri && object_index.emplace(b.value, objects.size()).second) objects.push_back(b.value);
            }
        }
    }
    std::vector<FetchOutcome> second(objects.size());
    parallel_for(objects.size(), limit, [&](std::size_t i) { second[i] = fetch_entity(objects[i], 2, options); });

    auto tally = [&](const FetchOutcome& o) {
        if (o.requested) ++result.requests;
        if (o.from_cache) ++result.cache_hits;
    };
    for (const auto& o : second) tally(o);
    std::set<std::string> reported;
    for (std::size_t i = 0; i < firsts.size(); ++i) {
        const auto& [key, entity] = firsts[i];
        const auto& o = outcomes[i];
        tally(o);
        if (o.error) {
            result.diagnostics.push_back({key, entity, 1, *o.error});
            continue;
        }
        if (o.bindings.empty()) result.diagnostics.push_back({key, entity, 1, "entity has no properties"});
        for (const auto& b : o.bindings) {
            result.triples.push_back({key, local_name(b.predicate), b.is_iri ? local_name(b.value) : b.value});
        }
        if (options.hop != 2) continue;
        for (const auto& b : o.bindings) {
            if (!b.is_iri) continue;
            const auto& sub = second[object_index.at(b.value)];
            if (sub.error) {
                if (reported.insert(key + '\n' + b.value).second)
                    result.diagnostics.push_back({key, b.value, 2, *sub.error});
                continue;
            }
            const std::string prefix = local_name(b.predicate) + ".";
            for (const auto& s : sub.bindings) {
                result.triples.push_back(
                    {key, prefix + local_name(s.predicate), s.is_iri ? local_name(s.value) : s.value});
            }
        }
    }
    for (const auto& u : entities.unmatched) result.diagnostics.push_back({u, "", 1, "no linked entity"});
    return result;
}

std::string default_cache_dir() {
    if (const char* env = std::getenv("CONFEX_CACHE_DIR"); env && *env) return env;
    return ".confex-cache";
}

}  // namespace confex
