#include "sgfa/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "sgfa/error.hpp"

namespace sgfa::io {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& source) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (rows.empty()) {
      width = cells.size();
    } else if (cells.size() != width) {
      std::ostringstream os;
      os << source << ": line " << line_no << " has " << cells.size() << " fields, expected "
         << width;
      fail(ErrorKind::Parse, os.str());
    }
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) fail(ErrorKind::Parse, source + ": empty file");
  return rows;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "NAN" || s == "na";
}

}  // namespace

Table parse_table(const std::string& text, const std::string& source) {
  const auto rows = parse_csv(text, source);
  if (rows.front().size() < 2)
    fail(ErrorKind::Parse, source + ": need an id column and at least one value column");
  Table t;
  t.id_column = trim(rows.front().front());
  for (std::size_t c = 1; c < rows.front().size(); ++c) t.columns.push_back(trim(rows.front()[c]));
  const auto n = static_cast<Eigen::Index>(rows.size() - 1);
  const auto p = static_cast<Eigen::Index>(t.columns.size());
  t.values.resize(n, p);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r) + 1];
    t.row_ids.push_back(trim(row.front()));
    for (Eigen::Index c = 0; c < p; ++c) {
      const std::string cell = trim(row[static_cast<std::size_t>(c) + 1]);
      if (is_missing(cell)) {
        t.values(r, c) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (*first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) {
        std::ostringstream os;
        os << source << ": cannot parse '" << cell << "' as a number at row " << r + 2
           << " (id '" << t.row_ids[static_cast<std::size_t>(r)] << "'), column '"
           << t.columns[static_cast<std::size_t>(c)] << "'";
        fail(ErrorKind::Parse, os.str());
      }
      t.values(r, c) = v;
    }
  }
  return t;
}

Table read_table(const std::filesystem::path& path) {
  return parse_table(read_file(path), path.string());
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

namespace {

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_table(const std::string& id_column, const std::vector<std::string>& columns,
                         const std::vector<std::string>& row_ids, const Eigen::MatrixXd& values) {
  require(static_cast<Eigen::Index>(row_ids.size()) == values.rows() &&
              static_cast<Eigen::Index>(columns.size()) == values.cols(),
          ErrorKind::Shape, "format_table: names do not match the matrix shape");
  std::string out = quote(id_column);
  for (const auto& c : columns) out += "," + quote(c);
  out += "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out += quote(row_ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < values.cols(); ++c) out += "," + format_double(values(r, c));
    out += "\n";
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << contents;
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::Io, "SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace sgfa::io
