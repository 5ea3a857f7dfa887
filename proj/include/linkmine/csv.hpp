#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "linkmine/common.hpp"

namespace linkmine::csv {

/// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> parse_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << escape(fields[i]);
  }
  os << '\n';
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column, or -1.
  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline Table read(std::istream& in, const std::string& what = "csv") {
  Table t;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = parse_line(line);
    if (first) {
      for (auto& f : fields) f = trim(f);
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size())
      throw InvalidInput(what + ": line " + std::to_string(lineno) + " has " +
                         std::to_string(fields.size()) + " fields, expected " +
                         std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (first) throw InvalidInput(what + ": missing header");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path);
  return read(in, path);
}

/// Requires the header to equal `expected` exactly.
inline void expect_header(const Table& t, const std::vector<std::string>& expected,
                          const std::string& what) {
  if (t.header != expected)
    throw InvalidInput(what + ": expected header '" + join(expected, ",") + "', got '" +
                       join(t.header, ",") + "'");
}

}  // namespace linkmine::csv
