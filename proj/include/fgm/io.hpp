#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace fgm::io {

/// Writes to a sibling temp file, then renames over `path`, so readers never
/// see a partial file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest fixed-notation decimal that parses back to the same double.
std::string format_decimal(double v);

/// "x0,x1,..." for d columns.
std::vector<std::string> coordinate_header(Eigen::Index d);

std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header);

/// Numeric CSV, one sample per line. A first line that does not parse as
/// numbers is treated as a header. Throws ConfigError on ragged or
/// non-numeric rows.
Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path);

}  // namespace fgm::io
