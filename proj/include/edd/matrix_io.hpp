#pragma once

// Matrix container used for every file the tools read or write.
//
//   CSV:    first line "# rows cols", then one comma-separated row per line.
//           Values use the shortest representation that round-trips exactly.
//   Binary: 8-byte magic "EDDMAT01", rows and cols as little-endian u64,
//           then rows*cols little-endian f64 values in row-major order.
//
// read_matrix() detects the format from the leading bytes.

#include "edd/core.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace edd {

inline constexpr std::array<char, 8> kMatrixMagic = {'E', 'D', 'D', 'M', 'A', 'T', '0', '1'};

enum class MatrixFormat { csv, binary };

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xFF);
    return r;
  }
  return v;
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline bool read_u64(std::istream& is, std::uint64_t& v) {
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) return false;
  v = to_le(v);
  return true;
}

}  // namespace detail

inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  os << "# " << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) os << ',';
      os << detail::format_double(m(i, j));
    }
    os << '\n';
  }
}

inline void write_matrix_binary(std::ostream& os, const Matrix& m) {
  os.write(kMatrixMagic.data(), kMatrixMagic.size());
  detail::write_u64(os, static_cast<std::uint64_t>(m.rows()));
  detail::write_u64(os, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      double v = m(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::write_u64(os, bits);
    }
}

/// Format chosen from the extension: ".bin" means binary, anything else CSV.
inline MatrixFormat format_for_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".bin") == 0 ? MatrixFormat::binary
                                                                         : MatrixFormat::csv;
}

inline void write_matrix(const std::string& path, const Matrix& m) {
  const auto format = format_for_path(path);
  std::ofstream os(path, format == MatrixFormat::binary ? std::ios::binary : std::ios::out);
  if (!os) throw IoError(path, 0, "cannot open for writing");
  if (format == MatrixFormat::binary)
    write_matrix_binary(os, m);
  else
    write_matrix_csv(os, m);
  if (!os) throw IoError(path, 0, "write failed");
}

inline Matrix read_matrix_binary(std::istream& is, const std::string& name) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMatrixMagic)
    throw IoError(name, 0, "missing EDDMAT01 magic");
  std::uint64_t rows = 0, cols = 0;
  if (!detail::read_u64(is, rows) || !detail::read_u64(is, cols))
    throw IoError(name, 0, "truncated header");
  if (rows > (1ULL << 31) || cols > (1ULL << 31)) throw IoError(name, 0, "implausible dimensions");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      std::uint64_t bits = 0;
      if (!detail::read_u64(is, bits))
        throw IoError(name, 0, "truncated data at element " + std::to_string(i * m.cols() + j));
      std::memcpy(&m(i, j), &bits, sizeof bits);
    }
  return m;
}

inline Matrix read_matrix_csv(std::istream& is, const std::string& name) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw IoError(name, 1, "empty file");
  ++line_no;
  std::string_view header = detail::trim(line);
  if (header.empty() || header.front() != '#')
    throw IoError(name, line_no, "expected header '# rows cols'");
  header.remove_prefix(1);
  std::istringstream hs{std::string(header)};
  std::string rows_s, cols_s, extra;
  Index rows = -1, cols = -1;
  if (!(hs >> rows_s >> cols_s) || (hs >> extra) || !detail::parse_number(rows_s, rows) ||
      !detail::parse_number(cols_s, cols) || rows < 0 || cols < 0)
    throw IoError(name, line_no, "expected header '# rows cols'");

  Matrix m(rows, cols);
  Index r = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    if (r >= rows) throw IoError(name, line_no, "more rows than declared (" + std::to_string(rows) + ")");
    Index c = 0;
    while (true) {
      const auto comma = sv.find(',');
      const std::string_view field = sv.substr(0, comma);
      if (c >= cols)
        throw IoError(name, line_no, "more than " + std::to_string(cols) + " values in row");
      double v = 0.0;
      if (!detail::parse_number(field, v))
        throw IoError(name, line_no, "cannot parse '" + std::string(detail::trim(field)) + "'");
      if (!std::isfinite(v)) throw IoError(name, line_no, "non-finite value '" + std::string(detail::trim(field)) + "'");
      m(r, c++) = v;
      if (comma == std::string_view::npos) break;
      sv.remove_prefix(comma + 1);
    }
    if (c != cols)
      throw IoError(name, line_no,
                    "expected " + std::to_string(cols) + " values, found " + std::to_string(c));
    ++r;
  }
  if (r != rows)
    throw IoError(name, line_no,
                  "expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
  return m;
}

inline Matrix read_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path, 0, "cannot open for reading");
  std::array<char, 8> head{};
  is.read(head.data(), head.size());
  const bool binary = is.gcount() == 8 && head == kMatrixMagic;
  is.clear();
  is.seekg(0);
  return binary ? read_matrix_binary(is, path) : read_matrix_csv(is, path);
}

/// Integer class indices separated by commas and/or newlines; '#' starts a comment line.
inline std::vector<Index> read_labels(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(path, 0, "cannot open for reading");
  std::vector<Index> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    while (true) {
      const auto comma = sv.find(',');
      const std::string_view field = detail::trim(sv.substr(0, comma));
      if (!field.empty()) {
        Index v = 0;
        if (!detail::parse_number(field, v) || v < 0)
          throw IoError(path, line_no, "invalid class index '" + std::string(field) + "'");
        labels.push_back(v);
      }
      if (comma == std::string_view::npos) break;
      sv.remove_prefix(comma + 1);
    }
  }
  if (labels.empty()) throw IoError(path, line_no, "no labels found");
  return labels;
}

inline void write_labels(const std::string& path, const std::vector<Index>& labels) {
  std::ofstream os(path);
  if (!os) throw IoError(path, 0, "cannot open for writing");
  for (Index v : labels) os << v << '\n';
}

}  // namespace edd
