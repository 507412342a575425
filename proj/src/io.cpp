#include "fgm/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "fgm/errors.hpp"

namespace fgm::io {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw ConfigError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw ConfigError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_decimal(double v) {
  char buf[512];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (res.ec != std::errc{}) throw NumericalError("format_decimal: value does not fit");
  return std::string(buf, res.ptr);
}

std::vector<std::string> coordinate_header(Eigen::Index d) {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < d; ++i) h.push_back("x" + std::to_string(i));
  return h;
}

std::string matrix_to_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  if (static_cast<Eigen::Index>(header.size()) != m.cols()) {
    throw StructuralError("matrix_to_csv: header has " + std::to_string(header.size()) + " names for " +
                          std::to_string(m.cols()) + " columns");
  }
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_decimal(m(r, c));
    }
    out += '\n';
  }
  return out;
}

namespace {

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (true) {
    const std::size_t end = line.find(',', pos);
    std::string cell = line.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    std::size_t lead = 0;
    while (lead < cell.size() && cell[lead] == ' ') ++lead;
    double v = 0.0;
    const char* first = cell.data() + lead;
    const char* last = cell.data() + cell.size();
    if (first < last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last || first == last) return false;
    out.push_back(v);
    if (end == std::string::npos) return true;
    pos = end + 1;
  }
}

}  // namespace

Eigen::MatrixXd read_csv_matrix(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::vector<double>> rows;
  std::vector<double> cells;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (!parse_row(line, cells)) {
      if (line_no == 1) continue;
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": non-numeric row");
    }
    if (!rows.empty() && cells.size() != rows.front().size()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(rows.front().size()) + " columns");
    }
    rows.push_back(cells);
  }
  if (rows.empty()) throw ConfigError(path.string() + ": no data rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

}  // namespace fgm::io
