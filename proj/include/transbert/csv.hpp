#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace transbert::csv {

struct Record {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

/// RFC 4180 style: comma separated, double-quoted fields may contain commas,
/// newlines and doubled quotes. Blank lines are skipped.
std::vector<Record> parse(std::string_view text);
std::vector<Record> read_file(const std::filesystem::path& path);

/// Quotes a field when it contains a comma, quote or newline.
std::string format_row(const std::vector<std::string>& fields);

/// Tab-separated lines (no quoting). Blank lines are skipped.
std::vector<Record> read_tsv(const std::filesystem::path& path);

/// Writes through a temp file and renames into place.
void write_text_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_text(const std::filesystem::path& path);

}  // namespace transbert::csv
