#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace aquatwin {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Parse a decimal number; throws std::invalid_argument on trailing garbage.
double parse_double(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Whitespace tokenizer used by the INP reader.
std::vector<std::string_view> split_ws(std::string_view line);
std::vector<std::string_view> split_char(std::string_view line, char sep);
std::string_view trim(std::string_view s);
std::string to_upper(std::string_view s);

/// Minimal CSV builder. Cells are written verbatim; callers only emit
/// numbers and plain identifiers.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& cell(std::string_view text);
  CsvWriter& cell(double value);
  CsvWriter& cell(long long value);
  CsvWriter& cell(int value) { return cell(static_cast<long long>(value)); }
  CsvWriter& cell(std::size_t value) { return cell(static_cast<long long>(value)); }
  void end_row();
  const std::string& str() const noexcept { return out_; }

 private:
  std::string out_;
  std::size_t columns_;
  std::size_t in_row_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);

}  // namespace aquatwin
