#pragma once

#include <optional>
#include <string>
#include <vector>

namespace stockformer::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Column index for a header name, or -1.
    int column(const std::string& name) const;
};

// Reads a comma-separated file with a mandatory header row. Empty lines are
// skipped. Throws ParseError naming the 1-based line on ragged rows.
Table read_file(const std::string& path);
Table read_string(const std::string& text);

void write_file(const std::string& path, const Table& table);

// Shortest round-trip decimal text for a double (std::to_chars), so that
// write -> read reproduces values bit-exactly.
std::string format_double(double v);

// Strict double parse of a whole field; throws ParseError on junk.
double parse_double(const std::string& field, const std::string& context);
long parse_long(const std::string& field, const std::string& context);

}  // namespace stockformer::csv
