#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace exformer {

// Shortest round-trip decimal form.
std::string format_double(double v);

// RFC-4180 writer: comma separated, CRLF-free (LF) line endings, fields quoted
// only when they contain a comma, quote or newline.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);

  CsvWriter& field(std::string_view s);
  CsvWriter& field(double v);
  CsvWriter& field(long long v);
  CsvWriter& field(std::size_t v) { return field(static_cast<long long>(v)); }
  CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
  CsvWriter& empty();
  void end_row();
  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  bool first_ = true;
  std::filesystem::path path_;
};

// Splits one RFC-4180 record. Embedded newlines are not supported.
std::vector<std::string> split_csv_line(std::string_view line);

// Whole file as records; a trailing CR on each line is dropped.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace exformer
