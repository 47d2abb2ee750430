#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gustuq {

/// Comma-delimited table; fields are not quoted. Blank lines are skipped.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  std::optional<std::size_t> find(std::string_view column) const;
  /// Throws IngestError naming the missing column.
  std::size_t require(std::string_view column) const;
};

std::vector<std::string> split_csv_line(std::string_view line);
/// Throws IngestError on an empty input or a row with the wrong field count.
CsvTable parse_csv(std::string_view text);

}  // namespace gustuq
