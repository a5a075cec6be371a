#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>

#include "ldiff/common.hpp"

namespace ldiff::io {

// Little-endian primitive IO. Host byte order is checked at compile time and
// swapped when needed.
void WriteU64(std::ostream& os, std::uint64_t v);
void WriteF64(std::ostream& os, double v);
std::uint64_t ReadU64(std::istream& is);
double ReadF64(std::istream& is);

/// Row-major f64 payload.
void WriteMatrixRowMajor(std::ostream& os, const Matrix& m);
Matrix ReadMatrixRowMajor(std::istream& is, Index rows, Index cols);

std::ofstream OpenForWrite(const std::filesystem::path& path, bool binary = false);
std::ifstream OpenForRead(const std::filesystem::path& path, bool binary = false);

/// Writes `m` as CSV with the given column prefix (x0, x1, ...). An optional
/// fingerprint goes into a leading "# fingerprint=..." comment line.
void WriteMatrixCsv(const Matrix& m, const std::filesystem::path& path,
                    const std::string& column_prefix = "x", const std::string& fingerprint = "");
/// Reads a numeric CSV with one header row; lines starting with '#' are skipped.
Matrix ReadMatrixCsv(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string FormatDouble(double v);

}  // namespace ldiff::io
