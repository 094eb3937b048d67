#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace chatlab::csv {

/// RFC 4180 field: quoted when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

/// One record terminated by CRLF.
std::string format_row(const std::vector<std::string>& fields);

/// Parses RFC 4180 text (CRLF or LF line endings) into records.
std::vector<std::vector<std::string>> parse(std::string_view text);

}  // namespace chatlab::csv
