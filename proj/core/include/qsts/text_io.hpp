#pragma once

// Small text helpers shared by the CSV and key=value readers/writers.

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace qsts {

/// printf-style fixed notation; "-0.000" is normalized to "0.000".
std::string format_fixed(double value, int decimals);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

/// Strict numeric parsing; throws Error(kFormat) naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

}  // namespace qsts
