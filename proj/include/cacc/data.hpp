#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace cacc::data {

/// Wide velocity table: `time` in seconds plus one m/s column per vehicle.
struct TraceTable {
  std::vector<double> time;
  std::vector<std::string> columns;            // e.g. "v1", "v2"
  std::vector<std::vector<double>> velocity;   // one vector per column

  std::size_t rows() const { return time.size(); }
  /// Throws RangeError if the column does not exist.
  std::size_t column_index(const std::string& name) const;
};

struct LeaderProfile {
  std::vector<double> velocity;  // m/s at dt spacing
  double t0 = 0.0;
  double t1 = 0.0;
  double dt = 0.1;
  std::string label;
};

inline constexpr double kMaxTraceVelocity = 60.0;

/// Parses `time,v1,v2,...` CSV. Columns other than `time` and `v<k>` are
/// ignored. Throws FormatError on a missing column, unparsable cell,
/// non-increasing time or a velocity outside [0, 60] m/s.
TraceTable parse_trace_csv(const std::filesystem::path& path);

/// Linear interpolation onto t0, t0 + dt, ... up to the last timestamp;
/// grid points past the last sample are clamped. Throws DomainError on a
/// table with fewer than two rows or dt <= 0.
TraceTable resample(const TraceTable& table, double dt);

/// Samples [t0, t1) of one column at dt; length round((t1 - t0) / dt).
/// Throws RangeError if the window is empty or leaves the table span.
LeaderProfile extract_window(const TraceTable& table, const std::string& column, double t0,
                             double t1, double dt);

/// Single-column CSV with `#` comment lines recording the window and dt.
void write_profile_csv(const std::filesystem::path& path, const LeaderProfile& profile);

}  // namespace cacc::data
