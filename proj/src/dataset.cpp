#include "confex/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "confex/csv.hpp"
#include "confex/error.hpp"
#include "confex/text.hpp"

namespace confex {

namespace text {

std::string format_number(double value) {
    if (std::isnan(value)) return "nan";
    if (value == 0.0) return "0";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc{}) return std::to_string(value);
    return std::string(buf, end);
}

std::optional<double> parse_number(std::string_view input) {
    const auto body = trim(input);
    if (body.empty()) return std::nullopt;
    std::string_view digits = body;
    if (digits.front() == '+') digits.remove_prefix(1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
    if (!std::isfinite(value)) return std::nullopt;
    return value;
}

std::string to_lower(std::string_view input) {
    std::string out(input);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view input) {
    const auto first = input.find_first_not_of(" \t");
    if (first == std::string_view::npos) return {};
    const auto last = input.find_last_not_of(" \t");
    return input.substr(first, last - first + 1);
}

std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, value >>= 4) out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    return out;
}

}  // namespace text

const char* to_string(ColumnKind kind) {
    return kind == ColumnKind::categorical ? "categorical" : "binned-numeric";
}

const char* to_string(ColumnOrigin origin) {
    switch (origin) {
        case ColumnOrigin::input: return "input";
        case ColumnOrigin::acquired: return "acquired";
        case ColumnOrigin::derived: return "derived";
    }
    return "unknown";
}

const char* to_string(Aggregate agg) {
    switch (agg) {
        case Aggregate::avg: return "avg";
        case Aggregate::sum: return "sum";
        case Aggregate::count: return "count";
        case Aggregate::max: return "max";
        case Aggregate::min: return "min";
    }
    return "avg";
}

Aggregate parse_aggregate(std::string_view input) {
    const auto name = text::to_lower(input);
    if (name == "avg" || name == "mean") return Aggregate::avg;
    if (name == "sum") return Aggregate::sum;
    if (name == "count") return Aggregate::count;
    if (name == "max") return Aggregate::max;
    if (name == "min") return Aggregate::min;
    throw Error(ErrorKind::validation, "dataset", "unknown aggregate: " + std::string(input));
}

// ---------------------------------------------------------------------------
// Column

namespace {

using Store = std::variant<std::vector<std::uint16_t>, std::vector<std::uint32_t>>;

Store make_store(const std::vector<std::uint32_t>& codes, std::size_t cardinality) {
    if (cardinality < missing_code_v<std::uint16_t>) {
        std::vector<std::uint16_t> narrow(codes.size());
        for (std::size_t i = 0; i < codes.size(); ++i) {
            narrow[i] = codes[i] == Column::kMissing ? missing_code_v<std::uint16_t>
                                                     : static_cast<std::uint16_t>(codes[i]);
        }
        return narrow;
    }
    return codes;
}

}  // namespace

Column Column::categorical(std::string name, const std::vector<std::optional<std::string>>& cells) {
    std::set<std::string> distinct;
    for (const auto& cell : cells) {
        if (cell) distinct.insert(*cell);
    }
    std::vector<std::string> labels(distinct.begin(), distinct.end());
    std::vector<std::uint32_t> codes(cells.size(), kMissing);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i]) continue;
        auto it = std::lower_bound(labels.begin(), labels.end(), *cells[i]);
        codes[i] = static_cast<std::uint32_t>(it - labels.begin());
    }
    return from_codes(std::move(name), codes, std::move(labels));
}

Column Column::from_codes(std::string name, const std::vector<std::uint32_t>& codes,
                          std::vector<std::string> labels, ColumnKind kind) {
    Column col;
    col.name_ = std::move(name);
    col.kind_ = kind;
    std::set<std::string_view> seen;
    for (const auto& label : labels) {
        if (!seen.insert(label).second) {
            throw Error(ErrorKind::validation, "dataset",
                        "duplicate value label '" + label + "' in column " + col.name_);
        }
    }
    for (auto code : codes) {
        if (code == kMissing) {
            ++col.missing_count_;
        } else if (code >= labels.size()) {
            throw Error(ErrorKind::validation, "dataset", "code out of range in column " + col.name_);
        }
    }
    col.store_ = make_store(codes, labels.size());
    col.source_distinct_ = labels.size();
    col.labels_ = std::move(labels);
    return col;
}

std::size_t Column::size() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, store_);
}

std::optional<std::uint32_t> Column::find_label(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == label) return static_cast<std::uint32_t>(i);
    }
    return std::nullopt;
}

std::vector<bool> Column::missing_mask() const {
    std::vector<bool> mask(size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = is_missing(i);
    return mask;
}

std::vector<std::uint32_t> Column::codes() const {
    std::vector<std::uint32_t> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = code(i).value_or(kMissing);
    return out;
}

CodeSpan Column::view() const {
    return std::visit([](const auto& v) -> CodeSpan { return std::span(v.data(), v.size()); }, store_);
}

std::optional<double> Column::numeric_value(std::size_t row) const {
    const auto c = code(row);
    if (!c) return std::nullopt;
    if (!raw_.empty()) return raw_[row];
    if (auto parsed = text::parse_number(labels_[*c])) return parsed;
    return static_cast<double>(*c);
}

bool Column::same_cells(const Column& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
        const auto a = code(i);
        const auto b = other.code(i);
        if (a.has_value() != b.has_value()) return false;
        if (a && label(*a) != other.label(*b)) return false;
    }
    return true;
}

Column bin_numeric(std::string name, const std::vector<std::optional<double>>& values,
                   std::size_t bins) {
    if (bins < 2) throw Error(ErrorKind::validation, "dataset", "bin count must be at least 2");
    std::vector<std::pair<double, std::size_t>> observed;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i]) observed.emplace_back(*values[i], i);
    }
    if (observed.empty()) {
        throw Error(ErrorKind::validation, "dataset", "cannot bin column with no observed values: " + name);
    }
    std::sort(observed.begin(), observed.end());
    const std::size_t n = observed.size();

    // Raw bin index per sorted position; ties inherit the first position's bin.
    std::vector<std::size_t> raw_bin(n);
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && observed[i].first == observed[i - 1].first) {
            raw_bin[i] = raw_bin[i - 1];
        } else {
            raw_bin[i] = i * bins / n;
            ++distinct;
        }
    }

    std::vector<std::uint32_t> codes(values.size(), Column::kMissing);
    std::vector<std::string> labels;
    std::size_t start = 0;
    while (start < n) {
        std::size_t stop = start;
        while (stop < n && raw_bin[stop] == raw_bin[start]) ++stop;
        const auto code = static_cast<std::uint32_t>(labels.size());
        const double lo = observed[start].first;
        const double hi = observed[stop - 1].first;
        labels.push_back(lo == hi ? text::format_number(lo)
                                  : "[" + text::format_number(lo) + ", " + text::format_number(hi) + "]");
        for (std::size_t i = start; i < stop; ++i) codes[observed[i].second] = code;
        start = stop;
    }

    Column col = Column::from_codes(std::move(name), codes, std::move(labels), ColumnKind::binned_numeric);
    col.raw_.assign(values.size(), std::nan(""));
    for (const auto& [value, row] : observed) col.raw_[row] = value;
    col.source_distinct_ = distinct;
    return col;
}

// ---------------------------------------------------------------------------
// Table

void Table::add_column(Column column) {
    if (has_column(column.name())) {
        throw Error(ErrorKind::validation, "dataset", "duplicate column name: " + column.name());
    }
    if (columns_.empty()) {
        row_count_ = column.size();
    } else if (column.size() != row_count_) {
        throw Error(ErrorKind::validation, "dataset",
                    "column " + column.name() + " has " + std::to_string(column.size()) +
                        " cells, table has " + std::to_string(row_count_) + " rows");
    }
    columns_.push_back(std::move(column));
}

std::optional<std::size_t> Table::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
        if (columns_[i].name() == name) return i;
    }
    return std::nullopt;
}

const Column& Table::column(std::string_view name) const {
    const auto idx = index_of(name);
    if (!idx) throw Error(ErrorKind::validation, "dataset", "unknown column: " + std::string(name));
    return columns_[*idx];
}

std::vector<std::string> Table::column_names() const {
    std::vector<std::string> names;
    names.reserve(columns_.size());
    for (const auto& c : columns_) names.push_back(c.name());
    return names;
}

// ---------------------------------------------------------------------------
// RowSelection

RowSelection RowSelection::all(std::size_t universe) {
    RowSelection sel;
    sel.mask_.assign(universe, true);
    sel.rows_.resize(universe);
    std::iota(sel.rows_.begin(), sel.rows_.end(), 0U);
    return sel;
}

RowSelection RowSelection::from_mask(std::vector<bool> mask) {
    RowSelection sel;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) sel.rows_.push_back(static_cast<std::uint32_t>(i));
    }
    sel.mask_ = std::move(mask);
    return sel;
}

RowSelection RowSelection::from_rows(std::size_t universe, std::vector<std::uint32_t> rows) {
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    RowSelection sel;
    sel.mask_.assign(universe, false);
    for (auto r : rows) sel.mask_.at(r) = true;
    sel.rows_ = std::move(rows);
    return sel;
}

RowSelection RowSelection::intersect(const RowSelection& other) const {
    if (universe() != other.universe()) {
        throw Error(ErrorKind::validation, "dataset", "row selections over different tables");
    }
    std::vector<std::uint32_t> rows;
    for (auto r : rows_) {
        if (other.mask_[r]) rows.push_back(r);
    }
    RowSelection sel;
    sel.mask_.assign(universe(), false);
    for (auto r : rows) sel.mask_[r] = true;
    sel.rows_ = std::move(rows);
    return sel;
}

// ---------------------------------------------------------------------------
// Queries

void QuerySpec::validate(const Table& table) const {
    auto require = [&](const std::string& name, const char* role) {
        if (!table.has_column(name)) {
            throw Error(ErrorKind::validation, "dataset",
                        std::string("unknown ") + role + " column: " + name);
        }
    };
    require(outcome, "outcome");
    require(exposure, "exposure");
    if (outcome == exposure) throw Error(ErrorKind::validation, "dataset", "outcome and exposure must differ");
    for (const auto& p : context) {
        require(p.column, "context");
        if (p.column == outcome || p.column == exposure) {
            throw Error(ErrorKind::validation, "dataset",
                        "context may not constrain the outcome or exposure: " + p.column);
        }
        if (p.code >= table.column(p.column).cardinality()) {
            throw Error(ErrorKind::validation, "dataset", "context value out of range for " + p.column);
        }
    }
}

std::vector<std::string> QuerySpec::context_columns() const {
    std::vector<std::string> cols;
    for (const auto& p : context) cols.push_back(p.column);
    return cols;
}

Predicate resolve_predicate(const Table& table, std::string_view column, std::string_view label) {
    const auto& col = table.column(column);
    const auto code = col.find_label(label);
    if (!code) {
        throw Error(ErrorKind::validation, "dataset",
                    "unknown value '" + std::string(label) + "' for column " + std::string(column));
    }
    return {std::string(column), *code};
}

QuerySpec parse_query_json(std::string_view input, const Table& table) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(input);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, "dataset", std::string("query is not valid JSON: ") + e.what());
    }
    QuerySpec q;
    try {
        q.outcome = doc.at("outcome").get<std::string>();
        q.exposure = doc.at("exposure").get<std::string>();
        q.aggregate = parse_aggregate(doc.value("aggregate", std::string("avg")));
        if (doc.contains("context")) {
            for (const auto& p : doc.at("context")) {
                q.context.push_back(
                    resolve_predicate(table, p.at("attr").get<std::string>(), p.at("value").get<std::string>()));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, "dataset", std::string("malformed query: ") + e.what());
    }
    q.validate(table);
    return q;
}

std::string query_to_json(const QuerySpec& query, const Table& table) {
    nlohmann::json ctx = nlohmann::json::array();
    for (const auto& p : query.context) {
        ctx.push_back({{"attr", p.column}, {"value", table.column(p.column).label(p.code)}});
    }
    nlohmann::json doc = {{"outcome", query.outcome},
                          {"exposure", query.exposure},
                          {"aggregate", to_string(query.aggregate)},
                          {"context", ctx}};
    return doc.dump();
}

RowSelection select_context(const Table& table, std::span<const Predicate> context) {
    std::vector<bool> mask(table.row_count(), true);
    for (const auto& p : context) {
        const auto& col = table.column(p.column);
        if (p.code >= col.cardinality()) {
            throw Error(ErrorKind::validation, "dataset", "context value out of range for " + p.column);
        }
        std::visit(
            [&](auto codes) {
                for (std::size_t r = 0; r < codes.size(); ++r) {
                    if (codes[r] != p.code) mask[r] = false;
                }
            },
            col.view());
    }
    return RowSelection::from_mask(std::move(mask));
}

RowSelection query_rows(const Table& table, const QuerySpec& query) {
    auto ctx = select_context(table, query.context);
    const auto& o = table.column(query.outcome);
    const auto& t = table.column(query.exposure);
    std::vector<std::uint32_t> rows;
    rows.reserve(ctx.selected_count());
    for (auto r : ctx.rows()) {
        if (!o.is_missing(r) && !t.is_missing(r)) rows.push_back(r);
    }
    return RowSelection::from_rows(table.row_count(), std::move(rows));
}

std::vector<GroupRow> group_aggregate(const Table& table, const QuerySpec& query) {
    query.validate(table);
    const auto ctx = select_context(table, query.context);
    if (ctx.empty()) throw Error(ErrorKind::validation, "dataset", "no rows match the query context");
    const auto& o = table.column(query.outcome);
    const auto& t = table.column(query.exposure);

    struct Acc {
        bool present = false;
        double sum = 0, lo = 0, hi = 0;
        std::size_t n = 0;
    };
    std::vector<Acc> acc(t.cardinality());
    for (auto r : ctx.rows()) {
        const auto g = t.code(r);
        if (!g) continue;
        auto& a = acc[*g];
        a.present = true;
        const auto v = o.numeric_value(r);
        if (!v) continue;
        if (a.n == 0) {
            a.lo = a.hi = *v;
        } else {
            a.lo = std::min(a.lo, *v);
            a.hi = std::max(a.hi, *v);
        }
        a.sum += *v;
        ++a.n;
    }

    std::vector<GroupRow> out;
    for (std::uint32_t g = 0; g < acc.size(); ++g) {
        const auto& a = acc[g];
        if (!a.present) continue;
        GroupRow row{g, t.label(g), std::nan(""), a.n};
        switch (query.aggregate) {
            case Aggregate::count: row.value = static_cast<double>(a.n); break;
            case Aggregate::sum: row.value = a.sum; break;
            case Aggregate::avg:
                if (a.n) row.value = a.sum / static_cast<double>(a.n);
                break;
            case Aggregate::max:
                if (a.n) row.value = a.hi;
                break;
            case Aggregate::min:
                if (a.n) row.value = a.lo;
                break;
        }
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion

bool CsvOptions::is_null(std::string_view cell) const {
    const auto lowered = text::to_lower(text::trim(cell));
    for (const auto& token : null_tokens) {
        if (lowered == text::to_lower(token)) return true;
    }
    return false;
}

Column column_from_cells(std::string name, const std::vector<std::optional<std::string>>& cells,
                         const CsvOptions& options) {
    ColumnHint hint;
    if (auto it = options.hints.find(name); it != options.hints.end()) hint = it->second;

    bool any_observed = false;
    bool all_numeric = true;
    std::vector<std::optional<double>> numbers(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i]) continue;
        any_observed = true;
        numbers[i] = text::parse_number(*cells[i]);
        if (!numbers[i]) all_numeric = false;
    }

    ColumnKind kind = (any_observed && all_numeric) ? ColumnKind::binned_numeric : ColumnKind::categorical;
    if (hint.kind) kind = *hint.kind;
    if (kind == ColumnKind::binned_numeric) {
        if (!all_numeric) {
            throw Error(ErrorKind::parse, "dataset", "column " + name + " is declared numeric but has non-numeric cells");
        }
        return bin_numeric(std::move(name), numbers, hint.bins.value_or(options.default_bins));
    }
    return Column::categorical(std::move(name), cells);
}

Table ingest_csv_text(std::string_view input, std::string name, const CsvOptions& options) {
    const auto records = csv::parse(input, options.delimiter);
    if (records.empty()) throw Error(ErrorKind::parse, "dataset", "missing header row");
    const auto& header = records.front();
    {
        std::set<std::string> seen;
        for (const auto& h : header) {
            if (!seen.insert(h).second) throw Error(ErrorKind::parse, "dataset", "duplicate column name: " + h);
        }
    }
    if (records.size() < 2) throw Error(ErrorKind::parse, "dataset", "file has zero data rows");

    const std::size_t rows = records.size() - 1;
    std::vector<std::vector<std::optional<std::string>>> cells(header.size(),
                                                               std::vector<std::optional<std::string>>(rows));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& rec = records[r + 1];
        if (rec.size() != header.size()) {
            throw Error(ErrorKind::parse, "dataset",
                        "row " + std::to_string(r + 2) + " has " + std::to_string(rec.size()) +
                            " fields, expected " + std::to_string(header.size()));
        }
        for (std::size_t c = 0; c < rec.size(); ++c) {
            if (!options.is_null(rec[c])) cells[c][r] = rec[c];
        }
    }

    Table table(std::move(name));
    for (std::size_t c = 0; c < header.size(); ++c) {
        table.add_column(column_from_cells(header[c], cells[c], options));
    }
    return table;
}

Table ingest_csv(const std::string& path, const CsvOptions& options) {
    return ingest_csv_text(csv::read_file(path), path, options);
}

}  // namespace confex
