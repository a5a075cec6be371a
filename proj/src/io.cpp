#include "ldiff/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>
#include <vector>

namespace ldiff::io {
namespace {

std::uint64_t ToLittle(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return __builtin_bswap64(v);
  }
}

}  // namespace

void WriteU64(std::ostream& os, std::uint64_t v) {
  const std::uint64_t le = ToLittle(v);
  os.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

void WriteF64(std::ostream& os, double v) { WriteU64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t ReadU64(std::istream& is) {
  std::uint64_t le = 0;
  is.read(reinterpret_cast<char*>(&le), sizeof(le));
  if (!is) throw std::runtime_error("io: unexpected end of binary stream");
  return ToLittle(le);
}

double ReadF64(std::istream& is) { return std::bit_cast<double>(ReadU64(is)); }

void WriteMatrixRowMajor(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) WriteF64(os, m(i, j));
  }
}

Matrix ReadMatrixRowMajor(std::istream& is, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = ReadF64(is);
  }
  return m;
}

std::ofstream OpenForWrite(const std::filesystem::path& path, bool binary) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary | std::ios::out : std::ios::out);
  if (!os) throw std::runtime_error("io: cannot open for writing: " + path.string());
  return os;
}

std::ifstream OpenForRead(const std::filesystem::path& path, bool binary) {
  std::ifstream is(path, binary ? std::ios::binary | std::ios::in : std::ios::in);
  if (!is) throw std::runtime_error("io: cannot open for reading: " + path.string());
  return is;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

void WriteMatrixCsv(const Matrix& m, const std::filesystem::path& path,
                    const std::string& column_prefix, const std::string& fingerprint) {
  auto os = OpenForWrite(path);
  if (!fingerprint.empty()) os << "# fingerprint=" << fingerprint << "\n";
  for (Index j = 0; j < m.cols(); ++j) {
    if (j) os << ',';
    os << column_prefix << j;
  }
  os << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << FormatDouble(m(i, j));
    }
    os << '\n';
  }
}

Matrix ReadMatrixCsv(const std::filesystem::path& path) {
  auto is = OpenForRead(path);
  std::string line;
  bool header_seen = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("io: ragged CSV rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  const Index cols = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  Matrix m(static_cast<Index>(rows.size()), cols);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace ldiff::io
