#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace scnn::io {

// Shortest decimal form that reads back to the same double.
std::string format_double(double v);
// Rounded to `decimals` places (for display tables).
std::string format_fixed(double v, int decimals);

// Parses a full field as a double; throws ParseError with `offset` on failure.
double parse_double(std::string_view field, std::size_t offset);
long long parse_int(std::string_view field, std::size_t offset);

// Plain comma split, no quoting.
std::vector<std::string_view> split(std::string_view line, char sep = ',');

std::string trim(std::string_view s);

}  // namespace scnn::io
