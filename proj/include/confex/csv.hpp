#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace confex::csv {

using Record = std::vector<std::string>;

// RFC 4180 style: quoted fields may contain the delimiter, doubled quotes and
// line breaks. Accepts \n and \r\n line endings; blank lines are skipped.
std::vector<Record> parse(std::string_view text, char delimiter = ',');

std::string read_file(const std::string& path);

std::string escape(std::string_view field, char delimiter = ',');
std::string format_record(const Record& record, char delimiter = ',');

}  // namespace confex::csv
