#pragma once

// Artifact formats: versioned CSV with 17-significant-digit floats, the VGAM
// little-endian binary matrix format, and JSON via nlohmann.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pvga/error.hpp"
#include "pvga/linalg.hpp"

namespace pvga::io {

using Json = nlohmann::ordered_json;

inline constexpr int kArtifactVersion = 1;
inline constexpr std::array<char, 4> kVgamMagic{'V', 'G', 'A', 'M'};
inline constexpr std::uint8_t kVgamVersion = 1;

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end == s.data()) throw Error(ErrorKind::InvalidData, "not a number: '" + s + "'");
  if (end != s.data() + s.size()) throw Error(ErrorKind::InvalidData, "trailing characters in number '" + s + "'");
  return v;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV

/// A CSV artifact: "# pvga <name> v<version>: <columns>" comment, a header row,
/// then one comma-separated row per record.
struct CsvTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> r) {
    require(r.size() == columns.size(), ErrorKind::DimensionMismatch, "csv row width differs from header");
    rows.push_back(std::move(r));
  }

  std::string str() const {
    std::string out = "# pvga " + name + " v" + std::to_string(kArtifactVersion) + ": ";
    std::string header;
    for (std::size_t i = 0; i < columns.size(); ++i) header += (i ? "," : "") + columns[i];
    out += header + "\n" + header + "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
      out += "\n";
    }
    return out;
  }
};

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto sp = line.find(' ', 7);
      if (line.rfind("# pvga ", 0) == 0 && sp != std::string::npos) t.name = line.substr(7, sp - 7);
      continue;
    }
    if (!have_header) {
      t.columns = split(line, ',');
      have_header = true;
      continue;
    }
    auto r = split(line, ',');
    if (r.size() != t.columns.size()) throw Error(ErrorKind::InvalidData, "csv row width differs from header");
    t.rows.push_back(std::move(r));
  }
  if (!have_header) throw Error(ErrorKind::InvalidData, "csv has no header row");
  return t;
}

inline CsvTable vector_table(const std::string& name, const std::string& column, const Vector& v) {
  CsvTable t{name, {"index", column}, {}};
  for (Index i = 0; i < v.size(); ++i) t.add_row({std::to_string(i), format_double(v(i))});
  return t;
}

/// Numeric column `column` of a parsed table.
inline Vector column(const CsvTable& t, const std::string& column) {
  std::size_t k = 0;
  while (k < t.columns.size() && t.columns[k] != column) ++k;
  if (k == t.columns.size()) throw Error(ErrorKind::InvalidData, "csv has no column '" + column + "'");
  Vector v(static_cast<Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) v(static_cast<Index>(i)) = parse_double(t.rows[i][k]);
  return v;
}

/// Entries (i, j, C_ij) on the mask support, row by row.
inline CsvTable masked_table(const std::string& name, const Matrix& c, const SparsityMask& mask) {
  CsvTable t{name, {"i", "j", "value"}, {}};
  for (Index i = 0; i < mask.dim(); ++i)
    for (Index j : mask.row(i)) t.add_row({std::to_string(i), std::to_string(j), format_double(c(i, j))});
  return t;
}

// ---------------------------------------------------------------------------
// VGAM binary: "VGAM", version byte, u64 rows, u64 cols, row-major LE f64.

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  return v;
}

}  // namespace detail

inline std::string encode_vgam(const Matrix& a) {
  std::string out(kVgamMagic.begin(), kVgamMagic.end());
  out.push_back(static_cast<char>(kVgamVersion));
  detail::put_u64(out, static_cast<std::uint64_t>(a.rows()));
  detail::put_u64(out, static_cast<std::uint64_t>(a.cols()));
  out.reserve(out.size() + 8 * static_cast<std::size_t>(a.size()));
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) detail::put_u64(out, std::bit_cast<std::uint64_t>(a(i, j)));
  return out;
}

inline Matrix decode_vgam(const std::string& bytes) {
  constexpr std::size_t header = 4 + 1 + 8 + 8;
  if (bytes.size() < header || !std::equal(kVgamMagic.begin(), kVgamMagic.end(), bytes.begin())) {
    throw Error(ErrorKind::InvalidData, "not a VGAM file");
  }
  if (static_cast<std::uint8_t>(bytes[4]) != kVgamVersion) {
    throw Error(ErrorKind::InvalidData, "unsupported VGAM version " + std::to_string(static_cast<int>(bytes[4])));
  }
  const std::uint64_t rows = detail::get_u64(bytes, 5);
  const std::uint64_t cols = detail::get_u64(bytes, 13);
  if (cols != 0 && rows > (bytes.size() - header) / 8 / cols) {
    throw Error(ErrorKind::InvalidData, "VGAM payload shorter than its header claims");
  }
  if (bytes.size() != header + 8 * rows * cols) throw Error(ErrorKind::InvalidData, "VGAM payload size mismatch");
  Matrix a(static_cast<Index>(rows), static_cast<Index>(cols));
  std::size_t pos = header;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j, pos += 8) a(i, j) = std::bit_cast<double>(detail::get_u64(bytes, pos));
  return a;
}

inline void write_vgam(const std::filesystem::path& path, const Matrix& a) { write_text(path, encode_vgam(a)); }
inline Matrix read_vgam(const std::filesystem::path& path) { return decode_vgam(read_text(path)); }

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const Vector& v) {
  Json j = Json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

template <class T>
Json to_json(const std::vector<T>& v) {
  Json j = Json::array();
  for (const T& x : v) j.push_back(x);
  return j;
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace pvga::io
