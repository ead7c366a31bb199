#ifndef RISKSTACK_CSV_HPP
#define RISKSTACK_CSV_HPP

#include "riskstack/core.hpp"

#include <charconv>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace riskstack::csv {

// Split one CSV record. Fields may be double-quoted; "" inside quotes is a literal quote.
inline auto split(std::string_view line) -> std::vector<std::string>
{
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw InvalidArgument("unterminated quoted field");
    fields.push_back(std::move(cur));
    return fields;
}

inline auto quote(std::string_view field) -> std::string
{
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

// Reads the next non-empty line, stripping a trailing CR. Returns false at EOF.
inline auto next_line(std::istream& in, std::string& line) -> bool
{
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) return true;
    }
    return false;
}

inline auto strip_bom(std::string& s)
{
    if (s.size() >= 3 && s.compare(0, 3, "\xEF\xBB\xBF") == 0) s.erase(0, 3);
}

inline auto trim(std::string_view s) -> std::string_view
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// nullopt for an empty cell; throws InvalidArgument for anything that is not a plain real
inline auto parse_real(std::string_view cell) -> std::optional<double>
{
    cell = trim(cell);
    if (cell.empty()) return std::nullopt;
    if (cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw InvalidArgument("not a number: '" + std::string(cell) + "'");
    return v;
}

// shortest decimal that round-trips
inline auto format_real(double v) -> std::string
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields)
{
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << quote(fields[i]);
    }
    out << '\n';
}

} // namespace riskstack::csv

#endif
