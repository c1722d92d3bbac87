#pragma once

#include <string>

namespace dalda {

// Current UTC wall time as "YYYY-MM-DDTHH:MM:SSZ".
std::string now_iso8601();

// Lowercase ASCII copy.
std::string to_lower(std::string s);

// Strip leading/trailing ASCII whitespace.
std::string trim(const std::string& s);

} // namespace dalda
