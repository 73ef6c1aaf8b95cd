#include "vcomp/matrix_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "vcomp/errors.hpp"

namespace vcomp::io {
namespace {

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = line.find(',', pos);
    if (end == std::string::npos) end = line.size();
    std::size_t b = pos, e = end;
    while (b < e && (line[b] == ' ' || line[b] == '\t')) ++b;
    while (e > b && (line[e - 1] == ' ' || line[e - 1] == '\t' || line[e - 1] == '\r')) --e;
    if (b == e) return false;
    double value = 0.0;
    // from_chars rejects a leading '+'
    if (line[b] == '+') ++b;
    auto [ptr, ec] = std::from_chars(line.data() + b, line.data() + e, value);
    if (ec != std::errc() || ptr != line.data() + e) return false;
    out.push_back(value);
    pos = end + 1;
  }
  return !out.empty();
}

bool is_blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32(unsigned char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

}  // namespace

std::string format_double(double x) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", x);
  return buf.data();
}

Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot open '" + path.string() + "'");

  std::vector<double> values, row;
  Eigen::Index cols = -1, rows = 0;
  std::string line;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank_or_comment(line)) continue;
    if (!parse_row(line, row)) {
      if (first_content) {
        first_content = false;
        continue;  // header
      }
      raise(ErrorKind::Io, path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    first_content = false;
    if (cols < 0) cols = static_cast<Eigen::Index>(row.size());
    if (static_cast<Eigen::Index>(row.size()) != cols)
      raise(ErrorKind::Io, path.string() + ":" + std::to_string(line_no) +
                               ": expected " + std::to_string(cols) + " columns");
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) raise(ErrorKind::Io, "'" + path.string() + "' contains no data rows");

  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = values[static_cast<std::size_t>(i * cols + j)];
  return m;
}

Eigen::VectorXd read_csv_vector(const std::filesystem::path& path) {
  Eigen::MatrixXd m = read_csv_matrix(path);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  raise(ErrorKind::Io, "'" + path.string() + "' is not a single row or column");
}

void write_csv_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) raise(ErrorKind::Io, "cannot write '" + path.string() + "'");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) raise(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

void write_csv_vector(const std::filesystem::path& path, const Eigen::VectorXd& v) {
  write_csv_matrix(path, Eigen::MatrixXd(v));
}

Eigen::MatrixXd read_binary_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::array<unsigned char, 16> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != 16 || std::memcmp(header.data(), kBinaryMagic, 4) != 0)
    raise(ErrorKind::Io, "'" + path.string() + "' is not a VCMX matrix");
  const std::uint32_t n = load_u32(header.data() + 4);
  const std::uint32_t p = load_u32(header.data() + 8);
  const std::uint32_t width = load_u32(header.data() + 12);
  if (width != 4 && width != 8)
    raise(ErrorKind::Io, "unsupported element width " + std::to_string(width));

  const std::size_t count = static_cast<std::size_t>(n) * p;
  std::vector<unsigned char> raw(count * width);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    raise(ErrorKind::Io, "'" + path.string() + "' is truncated");

  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  Eigen::MatrixXd m(n, p);
  for (std::size_t k = 0; k < count; ++k) {
    double v;
    if (width == 8) {
      std::memcpy(&v, raw.data() + k * 8, 8);
    } else {
      float f;
      std::memcpy(&f, raw.data() + k * 4, 4);
      v = f;
    }
    m(static_cast<Eigen::Index>(k / p), static_cast<Eigen::Index>(k % p)) = v;
  }
  return m;
}

void write_binary_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                         int element_width) {
  require(element_width == 4 || element_width == 8, ErrorKind::InvalidArgument,
          "element width must be 4 or 8");
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write '" + path.string() + "'");
  std::array<unsigned char, 16> header{};
  std::memcpy(header.data(), kBinaryMagic, 4);
  store_u32(header.data() + 4, static_cast<std::uint32_t>(m.rows()));
  store_u32(header.data() + 8, static_cast<std::uint32_t>(m.cols()));
  store_u32(header.data() + 12, static_cast<std::uint32_t>(element_width));
  out.write(reinterpret_cast<const char*>(header.data()), header.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (element_width == 8) {
        double v = m(i, j);
        out.write(reinterpret_cast<const char*>(&v), 8);
      } else {
        float f = static_cast<float>(m(i, j));
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  if (!out) raise(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open '" + path.string() + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kBinaryMagic, 4) == 0) return read_binary_matrix(path);
  return read_csv_matrix(path);
}

}  // namespace vcomp::io
