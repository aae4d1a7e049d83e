#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "metricord/error.hpp"
#include "metricord/matrix.hpp"

namespace metricord {

// All numeric text output goes through here: 12 significant digits with a '.'
// decimal point. The program never calls setlocale, so snprintf stays in the
// "C" locale and golden files are stable across platforms.
inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;  // collapse -0
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_io("cannot open '" + path + "' for writing");
  out << content;
  if (!out) fail_io("failed while writing '" + path + "'");
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\n') {
      if (!current.empty() && current.back() == '\r') current.pop_back();
      lines.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) {
    if (current.back() == '\r') current.pop_back();
    lines.push_back(current);
  }
  return lines;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == delim) {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  fields.push_back(current);
  return fields;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Tab wins over comma so TSV files whose labels contain commas parse cleanly.
inline char detect_delimiter(const std::string& header_line) {
  if (header_line.find('\t') != std::string::npos) return '\t';
  return ',';
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char ch : field) {
    if (ch == '"') quoted += "\"\"";
    else quoted.push_back(ch);
  }
  quoted += "\"";
  return quoted;
}

inline double parse_cell(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s.empty()) fail_io("empty cell at " + where);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    fail_io("unparsable cell '" + s + "' at " + where);
  }
  if (used != s.size()) fail_io("unparsable cell '" + s + "' at " + where);
  return v;
}

struct CsvMatrix {
  std::string corner_label;
  std::vector<std::string> col_names;
  std::vector<std::string> row_names;
  Matrix values;
};

// Labeled numeric matrix, any sign. Delimiter sniffed from the header,
// '#' comment lines skipped. Counterpart of write_csv_matrix below.
inline CsvMatrix read_csv_matrix(const std::string& path) {
  const std::vector<std::string> raw_lines = split_lines(read_text_file(path));
  std::vector<std::vector<std::string>> grid;
  std::vector<int> grid_lines;
  char delim = '\0';
  for (std::size_t ln = 0; ln < raw_lines.size(); ++ln) {
    const std::string trimmed = trim(raw_lines[ln]);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    if (delim == '\0') delim = detect_delimiter(raw_lines[ln]);
    grid.push_back(split_fields(raw_lines[ln], delim));
    grid_lines.push_back(static_cast<int>(ln + 1));
  }
  if (grid.size() < 2 || grid.front().size() < 2)
    fail_io("'" + path + "': need a header row plus at least one data row");

  CsvMatrix out;
  const std::size_t width = grid.front().size();
  out.corner_label = trim(grid.front()[0]);
  for (std::size_t j = 1; j < width; ++j) out.col_names.push_back(trim(grid.front()[j]));
  out.values.resize(static_cast<Eigen::Index>(grid.size() - 1),
                    static_cast<Eigen::Index>(width - 1));
  for (std::size_t r = 1; r < grid.size(); ++r) {
    if (grid[r].size() != width)
      fail_io("'" + path + "' line " + std::to_string(grid_lines[r]) + ": expected " +
              std::to_string(width) + " fields, found " + std::to_string(grid[r].size()));
    out.row_names.push_back(trim(grid[r][0]));
    for (std::size_t j = 1; j < width; ++j)
      out.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(j - 1)) =
          parse_cell(grid[r][j], path + ":" + std::to_string(grid_lines[r]));
  }
  return out;
}

inline void write_csv_matrix(const std::string& path, const std::string& corner_label,
                             const std::vector<std::string>& col_names,
                             const std::vector<std::string>& row_names, const Matrix& values) {
  std::ostringstream out;
  out << csv_escape(corner_label);
  for (const auto& c : col_names) out << ',' << csv_escape(c);
  out << '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    out << csv_escape(row_names[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << ',' << format_number(values(i, j));
    out << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace metricord
