#include "distill/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace distill {

TrajectoryRecord::TrajectoryRecord(std::vector<std::string> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) columns_.push_back("step");
  if (columns_.front() != "step") throw std::invalid_argument("trajectory: first column must be 'step'");
}

void TrajectoryRecord::append(std::vector<double> row) {
  if (row.size() != columns_.size()) {
    std::ostringstream os;
    os << "trajectory: row has " << row.size() << " values, header has " << columns_.size();
    throw std::invalid_argument(os.str());
  }
  if (!rows_.empty() && !(row.front() > rows_.back().front()))
    throw std::invalid_argument("trajectory: step must strictly increase");
  rows_.push_back(std::move(row));
}

bool TrajectoryRecord::has_column(std::string_view name) const {
  return std::find(columns_.begin(), columns_.end(), name) != columns_.end();
}

std::size_t TrajectoryRecord::column_index(std::string_view name) const {
  const auto it = std::find(columns_.begin(), columns_.end(), name);
  if (it == columns_.end()) throw std::out_of_range("missing column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - columns_.begin());
}

std::vector<double> TrajectoryRecord::column(std::string_view name) const {
  const std::size_t j = column_index(name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[j]);
  return out;
}

double TrajectoryRecord::value(std::size_t row, std::string_view name) const { return rows_.at(row)[column_index(name)]; }

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(std::ostream& os, const TrajectoryRecord& rec, std::string_view schema_id, std::uint64_t seed) {
  os << "# schema=" << schema_id << " seed=" << seed << '\n';
  for (std::size_t j = 0; j < rec.columns().size(); ++j) os << (j ? "," : "") << rec.columns()[j];
  os << '\n';
  for (const auto& row : rec.rows()) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << format_number(row[j]);
    os << '\n';
  }
}

std::string to_csv(const TrajectoryRecord& rec, std::string_view schema_id, std::uint64_t seed) {
  std::ostringstream os;
  write_csv(os, rec, schema_id, seed);
  return os.str();
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("bad CSV number '" + s + "'");
  return v;
}

}  // namespace

TrajectoryRecord read_csv(std::istream& is) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    header = split(line);
    break;
  }
  if (header.empty()) throw std::invalid_argument("CSV has no header row");
  TrajectoryRecord rec(header);
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> row;
    for (const auto& cell : split(line)) row.push_back(parse_number(cell));
    rec.append(std::move(row));
  }
  return rec;
}

}  // namespace distill
