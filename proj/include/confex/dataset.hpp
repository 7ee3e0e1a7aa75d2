#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace confex {

enum class ColumnKind { categorical, binned_numeric };
enum class ColumnOrigin { input, acquired, derived };

const char* to_string(ColumnKind kind);
const char* to_string(ColumnOrigin origin);

// Read-only view over a column's code storage. The largest representable
// value of the element type marks a missing cell.
using CodeSpan = std::variant<std::span<const std::uint16_t>, std::span<const std::uint32_t>>;

template <typename T>
inline constexpr T missing_code_v = static_cast<T>(~T{0});

// A discrete attribute: one optional dense code per row plus the label of
// every code. Codes are stored 16-bit wide when the cardinality allows it.
class Column {
public:
    static constexpr std::uint32_t kMissing = missing_code_v<std::uint32_t>;

    Column() = default;

    // Codes are assigned in lexicographic label order.
    static Column categorical(std::string name, const std::vector<std::optional<std::string>>& cells);

    // `codes` uses kMissing for absent cells; every other entry must be < labels.size().
    static Column from_codes(std::string name, const std::vector<std::uint32_t>& codes,
                             std::vector<std::string> labels,
                             ColumnKind kind = ColumnKind::categorical);

    const std::string& name() const noexcept { return name_; }
    void rename(std::string name) { name_ = std::move(name); }
    ColumnKind kind() const noexcept { return kind_; }
    ColumnOrigin origin() const noexcept { return origin_; }
    void set_origin(ColumnOrigin origin) noexcept { origin_ = origin; }

    std::size_t size() const noexcept;
    std::uint32_t cardinality() const noexcept { return static_cast<std::uint32_t>(labels_.size()); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::string& label(std::uint32_t code) const { return labels_.at(code); }
    std::optional<std::uint32_t> find_label(std::string_view label) const;

    std::optional<std::uint32_t> code(std::size_t row) const;
    bool is_missing(std::size_t row) const { return !code(row).has_value(); }
    std::vector<bool> missing_mask() const;
    std::size_t missing_count() const noexcept { return missing_count_; }
    std::size_t observed_count() const noexcept { return size() - missing_count_; }
    std::vector<std::uint32_t> codes() const;

    CodeSpan view() const;

    // Distinct observed values before binning (equals cardinality for categorical columns).
    std::size_t source_distinct() const noexcept { return source_distinct_; }

    // Pre-binning value when kept, else the label parsed as a number, else the code.
    std::optional<double> numeric_value(std::size_t row) const;

    bool same_cells(const Column& other) const;

private:
    friend Column bin_numeric(std::string name, const std::vector<std::optional<double>>& values,
                              std::size_t bins);

    std::string name_;
    ColumnKind kind_ = ColumnKind::categorical;
    ColumnOrigin origin_ = ColumnOrigin::input;
    std::variant<std::vector<std::uint16_t>, std::vector<std::uint32_t>> store_;
    std::vector<std::string> labels_;
    std::vector<double> raw_;  // empty unless binned from numbers; NaN marks missing
    std::size_t missing_count_ = 0;
    std::size_t source_distinct_ = 0;
};

// Equal-frequency binning over the observed values. Tied values share the
// lower bin and empty bins are dropped, so cardinality <= bins.
Column bin_numeric(std::string name, const std::vector<std::optional<double>>& values,
                   std::size_t bins);

inline std::optional<std::uint32_t> Column::code(std::size_t row) const {
    if (const auto* narrow = std::get_if<std::vector<std::uint16_t>>(&store_)) {
        const std::uint16_t c = narrow->at(row);
        if (c == missing_code_v<std::uint16_t>) return std::nullopt;
        return c;
    }
    const std::uint32_t c = std::get<std::vector<std::uint32_t>>(store_).at(row);
    if (c == kMissing) return std::nullopt;
    return c;
}

inline Column bin_numeric(const std::vector<std::optional<double>>& values, std::size_t bins) {
    return bin_numeric(std::string{}, values, bins);
}

class Table {
public:
    Table() = default;
    explicit Table(std::string name) : name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }
    std::size_t row_count() const noexcept { return row_count_; }
    std::size_t column_count() const noexcept { return columns_.size(); }
    const std::vector<Column>& columns() const noexcept { return columns_; }

    // Appends a column; the first column fixes row_count.
    void add_column(Column column);

    std::optional<std::size_t> index_of(std::string_view name) const;
    bool has_column(std::string_view name) const { return index_of(name).has_value(); }
    const Column& column(std::size_t index) const { return columns_.at(index); }
    const Column& column(std::string_view name) const;
    std::vector<std::string> column_names() const;

private:
    std::string name_;
    std::vector<Column> columns_;
    std::size_t row_count_ = 0;
};

// Subset of table rows. Keeps both the bitmask and the ascending row list.
class RowSelection {
public:
    RowSelection() = default;
    static RowSelection all(std::size_t universe);
    static RowSelection from_mask(std::vector<bool> mask);
    static RowSelection from_rows(std::size_t universe, std::vector<std::uint32_t> rows);

    std::size_t universe() const noexcept { return mask_.size(); }
    std::size_t selected_count() const noexcept { return rows_.size(); }
    bool empty() const noexcept { return rows_.empty(); }
    bool contains(std::size_t row) const { return mask_.at(row); }
    const std::vector<bool>& mask() const noexcept { return mask_; }
    std::span<const std::uint32_t> rows() const noexcept { return rows_; }

    RowSelection intersect(const RowSelection& other) const;

private:
    std::vector<bool> mask_;
    std::vector<std::uint32_t> rows_;
};

struct Predicate {
    std::string column;
    std::uint32_t code = 0;

    friend bool operator==(const Predicate&, const Predicate&) = default;
    friend auto operator<=>(const Predicate&, const Predicate&) = default;
};

enum class Aggregate { avg, sum, count, max, min };

const char* to_string(Aggregate agg);
Aggregate parse_aggregate(std::string_view text);

struct QuerySpec {
    std::string outcome;
    std::string exposure;
    std::vector<Predicate> context;
    Aggregate aggregate = Aggregate::avg;

    // Throws validation errors for unknown columns, O == T, or O/T inside the context.
    void validate(const Table& table) const;
    std::vector<std::string> context_columns() const;
};

// Resolves a (column, label) pair into a predicate; unknown names are errors.
Predicate resolve_predicate(const Table& table, std::string_view column, std::string_view label);

// {"outcome", "exposure", "aggregate", "context": [{"attr", "value"}]}
QuerySpec parse_query_json(std::string_view text, const Table& table);
std::string query_to_json(const QuerySpec& query, const Table& table);

// Rows satisfying every predicate; rows missing a predicate column are excluded.
RowSelection select_context(const Table& table, std::span<const Predicate> context);

// Context rows whose outcome and exposure are both observed. Every estimate
// for a query runs on these rows.
RowSelection query_rows(const Table& table, const QuerySpec& query);

struct GroupRow {
    std::uint32_t exposure_code = 0;
    std::string exposure_label;
    double value = 0.0;
    std::size_t count = 0;  // observed outcome cells in the group
};

std::vector<GroupRow> group_aggregate(const Table& table, const QuerySpec& query);

struct ColumnHint {
    std::optional<ColumnKind> kind;
    std::optional<std::size_t> bins;
};

struct CsvOptions {
    char delimiter = ',';
    std::vector<std::string> null_tokens{"", "NA", "null"};
    std::size_t default_bins = 10;
    std::map<std::string, ColumnHint> hints;

    bool is_null(std::string_view cell) const;
};

// Columns whose observed cells all parse as numbers are binned unless hinted
// categorical.
Table ingest_csv(const std::string& path, const CsvOptions& options = {});
Table ingest_csv_text(std::string_view text, std::string name, const CsvOptions& options = {});

// Builds a column from raw text cells using the same typing rules as ingestion.
Column column_from_cells(std::string name, const std::vector<std::optional<std::string>>& cells,
                         const CsvOptions& options = {});

}  // namespace confex
