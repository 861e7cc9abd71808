#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace distill {

/// Per-step table of logged quantities. The first column is always "step",
/// steps strictly increase and every row has the header's width.
class TrajectoryRecord {
 public:
  TrajectoryRecord() : TrajectoryRecord(std::vector<std::string>{}) {}
  explicit TrajectoryRecord(std::vector<std::string> columns);

  void append(std::vector<double> row);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  std::size_t width() const { return columns_.size(); }

  bool has_column(std::string_view name) const;
  std::size_t column_index(std::string_view name) const;  // throws, naming the column
  std::vector<double> column(std::string_view name) const;
  double value(std::size_t row, std::string_view name) const;

  /// Non-finite gradient entries replaced by zero over the run.
  long nan_replacements = 0;
  /// Set when the run stopped early on a non-finite state.
  bool truncated = false;
  std::string truncation_reason;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

/// Shortest decimal form that parses back to the same double.
std::string format_number(double v);

/// CSV with one leading "# schema=<id> seed=<seed>" comment line and a header row.
void write_csv(std::ostream& os, const TrajectoryRecord& rec, std::string_view schema_id, std::uint64_t seed);
std::string to_csv(const TrajectoryRecord& rec, std::string_view schema_id, std::uint64_t seed);

/// Reads the format produced by write_csv; comment lines are skipped.
TrajectoryRecord read_csv(std::istream& is);

}  // namespace distill
