#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "deepcc/cc.hpp"
#include "deepcc/shim.hpp"
#include "deepcc/sim.hpp"
#include "deepcc/trace.hpp"

namespace deepcc {

struct FlowMetrics {
  double avg_delay_ms = 0.0;
  double avg_queuing_delay_ms = 0.0;
  double p95_delay_ms = 0.0;
  double throughput_bps = 0.0;
  double utilization = 0.0;
  std::size_t acks = 0;
};

// Metrics for one flow over [flow start, end of episode]. Utilization is the
// flow's delivery rate over the link's mean offered capacity in that window.
FlowMetrics flow_metrics(const EpisodeLog& log, std::size_t flow = 0);

// All flows pooled: ack delays merged, delivery summed, window from t = 0.
FlowMetrics aggregate_metrics(const EpisodeLog& log);

// (sum r)^2 / (n * sum r^2).
double jain_index(std::span<const double> rates);

// Nearest-rank percentile, q in (0, 100].
double percentile_nearest_rank(std::vector<double> values, double q);

enum class SweepAxis { kBufferBytes, kMrttMs, kTargetMs };
SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepRow {
  double value = 0.0;
  std::string mode;  // "raw" or "deepcc"
  FlowMetrics metrics;
};

// One raw row per value, plus one plug-in row per value when `policy` is
// given. Target values only affect plug-in rows.
std::vector<SweepRow> sweep(SweepAxis axis, const std::vector<double>& values, SchemeId scheme,
                            ActionPolicy* policy, const Trace& trace, const SimConfig& cfg,
                            const ShimConfig& shim = {});

std::string metrics_csv_header();
std::string metrics_csv_fields(const FlowMetrics& m);
void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows);

}  // namespace deepcc
