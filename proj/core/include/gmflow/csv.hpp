#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace gmflow {

struct Column {
  std::string name;
  std::variant<std::vector<double>, std::vector<std::string>> values;

  std::size_t size() const;
};

/// Named, equal-length columns.
using Series = std::vector<Column>;

/// RFC-4180 style text: header row, 12 significant digits, LF line endings.
/// Throws ValidationError on a column-length mismatch.
std::string format_csv(const Series& series);

/// Writes format_csv(series) atomically (temp file, then rename).
void emit_csv(const Series& series, const std::filesystem::path& path);

/// Reads a CSV written by emit_csv. Cells that parse as numbers become
/// numeric columns; anything else is kept as text.
Series read_csv(const std::filesystem::path& path);

void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace gmflow
