#include "cacc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cacc/errors.hpp"

namespace cacc::data {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool is_velocity_column(const std::string& name) {
  return name.size() > 1 && name[0] == 'v' &&
         std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; });
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  try {
    std::size_t used = 0;
    const double value = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(value)) throw std::invalid_argument(cell);
    return value;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("row {}: column '{}' has non-numeric value '{}'", row, column,
                                  cell));
  }
}

// Value of one column at time t by linear interpolation, clamped at the ends.
double interpolate(const std::vector<double>& time, const std::vector<double>& values, double t) {
  if (t <= time.front()) return values.front();
  if (t >= time.back()) return values.back();
  const auto upper = std::upper_bound(time.begin(), time.end(), t);
  const auto hi = static_cast<std::size_t>(upper - time.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - time[lo]) / (time[hi] - time[lo]);
  return values[lo] + w * (values[hi] - values[lo]);
}

}  // namespace

std::size_t TraceTable::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw RangeError("trace has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

TraceTable parse_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open trace file: " + path.string());

  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') break;
  }
  if (line.empty()) throw FormatError("trace file has no header row: " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto header = split_csv_line(line);
  std::size_t time_col = header.size();
  std::vector<std::size_t> vel_cols;
  TraceTable table;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "time") {
      time_col = c;
    } else if (is_velocity_column(header[c])) {
      vel_cols.push_back(c);
      table.columns.push_back(header[c]);
    }
  }
  if (time_col == header.size()) throw FormatError("trace header is missing column 'time'");
  if (vel_cols.empty()) throw FormatError("trace header has no velocity column 'v<k>'");
  table.velocity.resize(vel_cols.size());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size()) {
      throw FormatError(fmt::format("row {}: expected {} columns, got {}", row, header.size(),
                                    cells.size()));
    }
    const double t = parse_cell(cells[time_col], row, "time");
    if (!table.time.empty() && !(t > table.time.back())) {
      throw FormatError(fmt::format("row {}: time {} is not strictly increasing", row, t));
    }
    table.time.push_back(t);
    for (std::size_t k = 0; k < vel_cols.size(); ++k) {
      const double v = parse_cell(cells[vel_cols[k]], row, table.columns[k]);
      if (v < 0.0 || v > kMaxTraceVelocity) {
        throw FormatError(fmt::format("row {}: {}={} outside [0, 60] m/s", row, table.columns[k],
                                      v));
      }
      table.velocity[k].push_back(v);
    }
  }
  if (table.time.empty()) throw FormatError("trace file has no data rows: " + path.string());
  return table;
}

TraceTable resample(const TraceTable& table, double dt) {
  if (table.rows() < 2) throw DomainError("resample: need at least two rows");
  if (!(dt > 0.0)) throw DomainError("resample: dt must be > 0");
  const double t0 = table.time.front();
  const double span = table.time.back() - t0;
  // Tolerance absorbs round-off in spans that are whole multiples of dt.
  const auto n = static_cast<std::size_t>(std::floor(span / dt + 1e-9)) + 1;

  TraceTable out;
  out.columns = table.columns;
  out.velocity.resize(table.velocity.size());
  out.time.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.time.push_back(t0 + dt * static_cast<double>(i));
  for (std::size_t c = 0; c < table.velocity.size(); ++c) {
    out.velocity[c].reserve(n);
    for (double t : out.time) out.velocity[c].push_back(interpolate(table.time, table.velocity[c], t));
  }
  return out;
}

LeaderProfile extract_window(const TraceTable& table, const std::string& column, double t0,
                             double t1, double dt) {
  if (!(dt > 0.0)) throw DomainError("extract_window: dt must be > 0");
  if (!(t0 < t1)) throw RangeError(fmt::format("window [{}, {}) is empty", t0, t1));
  if (table.rows() == 0) throw RangeError("extract_window: empty table");
  constexpr double kSlack = 1e-9;
  if (t0 < table.time.front() - kSlack || t1 > table.time.back() + kSlack) {
    throw RangeError(fmt::format("window [{}, {}) outside trace span [{}, {}]", t0, t1,
                                 table.time.front(), table.time.back()));
  }
  const std::size_t col = table.column_index(column);
  const auto n = static_cast<std::size_t>(std::llround((t1 - t0) / dt));

  LeaderProfile profile;
  profile.t0 = t0;
  profile.t1 = t1;
  profile.dt = dt;
  profile.label = column;
  profile.velocity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    profile.velocity.push_back(
        interpolate(table.time, table.velocity[col], t0 + dt * static_cast<double>(i)));
  }
  return profile;
}

void write_profile_csv(const std::filesystem::path& path, const LeaderProfile& profile) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << fmt::format("# column={} t0={} t1={} dt={}\n", profile.label, profile.t0, profile.t1,
                     profile.dt);
  out << "velocity_mps\n";
  for (double v : profile.velocity) out << fmt::format("{:.6f}\n", v);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cacc::data
