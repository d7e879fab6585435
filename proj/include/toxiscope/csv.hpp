#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace toxiscope::csv {

struct Record {
    std::vector<std::string> fields;
    std::size_t row = 0;  // 1-based record number, header is row 1
};

/// Strict RFC-4180 reader. Quoted fields may contain separators, CRLF and
/// doubled quotes; a stray quote or an unterminated quoted field raises
/// ParseError carrying the row where the offending record starts.
std::vector<Record> parse(std::string_view text);

std::string quote_field(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

}  // namespace toxiscope::csv
