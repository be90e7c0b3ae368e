#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace sgfa::io {

/// A numeric CSV table: first column holds row identifiers, the header row
/// holds column names. Missing cells ("", NA, NaN) become NaN.
struct Table {
  std::string id_column;
  std::vector<std::string> columns;
  std::vector<std::string> row_ids;
  Eigen::MatrixXd values;  // rows x columns
};

/// Splits one CSV record; double quotes may enclose fields containing commas.
std::vector<std::string> split_csv_line(const std::string& line);

/// Raw string cells, header first. Ragged rows raise a parse error naming the
/// line number.
std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& source);

Table parse_table(const std::string& text, const std::string& source);
Table read_table(const std::filesystem::path& path);

/// Round-trip decimal formatting; NaN is written as NA.
std::string format_double(double v);

/// rows x columns matrix with an id column and a header.
std::string format_table(const std::string& id_column, const std::vector<std::string>& columns,
                         const std::vector<std::string>& row_ids, const Eigen::MatrixXd& values);

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, const std::string& contents);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace sgfa::io
