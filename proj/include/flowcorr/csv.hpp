#pragma once

// Minimal numeric CSV support: LF line endings, 17 significant digits, so
// every double survives a write/read cycle bit-exactly.

#include <filesystem>
#include <string>
#include <vector>

namespace flowcorr {

/// Shortest-safe round-trip decimal for a double ("%.17g").
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Writes atomically (temp file + rename). Throws IoError naming the path.
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// Parses a file written by write_csv. Throws IoError on malformed input.
CsvTable read_csv(const std::filesystem::path& path);

/// Writes text to path atomically. Throws IoError naming the path and cause.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace flowcorr
