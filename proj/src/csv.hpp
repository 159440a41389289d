#pragma once

// Minimal delimited-text helpers: fields may be double-quoted, quotes
// doubled inside. Enough for the record and table formats we emit.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triad::csv {

std::vector<std::string> split(std::string_view line, char delim = ',');
std::string quote(std::string_view field, char delim = ',');
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);
std::string trim(std::string_view s);
/// Shortest text that round-trips the double exactly.
std::string format_double(double v);

}  // namespace triad::csv
