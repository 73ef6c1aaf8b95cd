#pragma once

// Dense matrix exchange: CSV (one row per observation) and a small binary
// container.
//
// Binary layout, little-endian:
//   bytes 0..3   magic "VCMX"
//   bytes 4..7   n (uint32, rows)
//   bytes 8..11  p (uint32, cols)
//   bytes 12..15 element width in bytes (4 = float32, 8 = float64)
//   then n*p elements, row-major.

#include <filesystem>
#include <string>

#include <Eigen/Core>

namespace vcomp::io {

inline constexpr char kBinaryMagic[4] = {'V', 'C', 'M', 'X'};

/// Reads a numeric CSV. Blank lines and lines starting with '#' are skipped; a
/// first line that does not parse as numbers is treated as a header.
[[nodiscard]] Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path);

/// A single column or a single row, returned as a vector.
[[nodiscard]] Eigen::VectorXd read_csv_vector(const std::filesystem::path& path);

void write_csv_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);
void write_csv_vector(const std::filesystem::path& path, const Eigen::VectorXd& v);

[[nodiscard]] Eigen::MatrixXd read_binary_matrix(const std::filesystem::path& path);
void write_binary_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                         int element_width = 8);

/// Dispatches on the file's first four bytes.
[[nodiscard]] Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

/// Shortest representation that round-trips a double ("%.17g").
[[nodiscard]] std::string format_double(double x);

}  // namespace vcomp::io
