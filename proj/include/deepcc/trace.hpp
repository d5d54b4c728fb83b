#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace deepcc {

inline constexpr int kDefaultMtu = 1500;

// Packet delivery opportunities of a cellular link, one per timestamp
// (milliseconds since trace start). Several opportunities may share a
// millisecond. Replays from t=0 once simulated time passes the last entry.
class Trace {
 public:
  Trace() = default;
  explicit Trace(std::vector<std::int64_t> opportunities, int mtu_bytes = kDefaultMtu);

  const std::vector<std::int64_t>& opportunities() const { return opportunities_; }
  int mtu_bytes() const { return mtu_bytes_; }
  bool empty() const { return opportunities_.empty(); }
  std::size_t size() const { return opportunities_.size(); }

  // Length of one replay cycle: last timestamp + 1.
  std::int64_t period_ms() const;

  // Opportunities available at absolute simulated millisecond `t` (wrapping).
  int opportunities_at(std::int64_t t) const;

  bool operator==(const Trace& other) const = default;

 private:
  std::vector<std::int64_t> opportunities_;
  int mtu_bytes_ = kDefaultMtu;
  std::vector<int> per_ms_;  // opportunity count per ms of one cycle
};

struct TraceStats {
  double mean = 0.0;  // Mbps
  double std_dev = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;  // non-excess
  double min = 0.0;
  double max = 0.0;
};

struct SynthTraceConfig {
  double duration_s = 300.0;
  double target_mean = 12.7875;  // Mbps
  double target_std = 11.3804;
  double min_rate = 0.0;
  double max_rate = 90.0;
  double dwell_ms = 1000.0;  // mean holding time of one rate level
  std::uint64_t seed = 1;
  int mtu_bytes = kDefaultMtu;
};

Trace parse_trace(std::string_view text, int mtu_bytes = kDefaultMtu);
std::string serialize_trace(const Trace& trace);

Trace load_trace(const std::string& path, int mtu_bytes = kDefaultMtu);
void save_trace(const Trace& trace, const std::string& path);

// Moments of the per-bucket capacity. `span_ms` fixes the number of buckets
// (ceil(span/bucket)); 0 derives it from the last timestamp.
TraceStats trace_capacity_stats(const Trace& trace, std::int64_t bucket_ms = 1000,
                                std::int64_t span_ms = 0);

std::string stats_csv_header();
std::string stats_csv_row(const TraceStats& stats);

Trace generate_synthetic_trace(const SynthTraceConfig& cfg);

// Constant-rate trace: `per_ms` opportunities every millisecond.
Trace constant_trace(std::int64_t duration_ms, int per_ms, int mtu_bytes = kDefaultMtu);

}  // namespace deepcc
