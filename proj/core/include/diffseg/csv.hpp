#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace diffseg {

/// Shortest round-trip decimal representation ('.' decimal point).
std::string format_double(double value);
/// Strict parse of a full field; throws FormatError on trailing garbage.
double parse_double(std::string_view field);
long long parse_int(std::string_view field);

/// Header + rows, comma separated, LF line endings, no quoting.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  /// Index of a header column; throws FormatError when absent.
  std::size_t column(std::string_view name) const;

  std::string to_string() const;
  /// Writes via a temporary file and rename.
  void write(const std::filesystem::path& path) const;
  static CsvTable parse(std::string_view text);
  static CsvTable read(const std::filesystem::path& path);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Atomically replaces `path` with `contents`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace diffseg
