#include "toxiscope/csv.hpp"

#include "toxiscope/error.hpp"

namespace toxiscope::csv {

namespace {

[[noreturn]] void malformed(std::size_t row, const std::string& what) {
    throw Error(ErrorCode::ParseError, "csv row " + std::to_string(row) + ": " + what)
        .with_row(row);
}

}  // namespace

std::vector<Record> parse(std::string_view text) {
    if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);

    std::vector<Record> records;
    std::size_t i = 0;
    std::size_t row = 0;
    const std::size_t n = text.size();

    while (i < n) {
        ++row;
        Record rec;
        rec.row = row;
        // Blank line: skip, but only when it is really empty.
        if (text[i] == '\n' || (text[i] == '\r' && i + 1 < n && text[i + 1] == '\n')) {
            i += text[i] == '\r' ? 2 : 1;
            --row;
            continue;
        }
        bool end_of_record = false;
        while (!end_of_record) {
            std::string field;
            if (i < n && text[i] == '"') {
                ++i;
                bool closed = false;
                while (i < n) {
                    if (text[i] == '"') {
                        if (i + 1 < n && text[i + 1] == '"') {
                            field.push_back('"');
                            i += 2;
                            continue;
                        }
                        closed = true;
                        ++i;
                        break;
                    }
                    field.push_back(text[i++]);
                }
                if (!closed) malformed(rec.row, "unterminated quoted field");
                if (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r')
                    malformed(rec.row, "unexpected character after closing quote");
            } else {
                while (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
                    if (text[i] == '"') malformed(rec.row, "quote inside unquoted field");
                    field.push_back(text[i++]);
                }
            }
            rec.fields.push_back(std::move(field));

            if (i >= n) {
                end_of_record = true;
            } else if (text[i] == ',') {
                ++i;
            } else if (text[i] == '\r') {
                if (i + 1 < n && text[i + 1] == '\n') {
                    i += 2;
                } else {
                    malformed(rec.row, "bare carriage return");
                }
                end_of_record = true;
            } else {  // '\n'
                ++i;
                end_of_record = true;
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::string quote_field(std::string_view field) {
    bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_row(const std::vector<std::string>& fields) {
    if (fields.size() == 1 && fields[0].empty()) return "\"\"\r\n";
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out.append(quote_field(fields[i]));
    }
    out.append("\r\n");
    return out;
}

}  // namespace toxiscope::csv
