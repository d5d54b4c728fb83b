#include "deepcc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "deepcc/error.hpp"

namespace deepcc {

namespace {

double offered_bytes_since(const EpisodeLog& log, std::int64_t start_ms) {
  double bytes = 0.0;
  for (const auto& r : log.ticks)
    if (r.t >= start_ms) bytes += static_cast<double>(r.capacity_bytes);
  return bytes;
}

FlowMetrics summarize(std::vector<double> rtts, double delivered_bytes, double offered_bytes,
                      double duration_ms, int mrtt_ms) {
  if (rtts.empty()) throw Error("flow metrics need at least one ack");
  FlowMetrics m;
  m.acks = rtts.size();
  double sum = 0.0;
  for (double r : rtts) sum += r;
  m.avg_delay_ms = sum / static_cast<double>(rtts.size());
  m.avg_queuing_delay_ms = std::max(0.0, m.avg_delay_ms - mrtt_ms);
  m.p95_delay_ms = percentile_nearest_rank(std::move(rtts), 95.0);
  const double seconds = duration_ms / 1000.0;
  m.throughput_bps = seconds > 0.0 ? delivered_bytes * 8.0 / seconds : 0.0;
  m.utilization = offered_bytes > 0.0 ? delivered_bytes / offered_bytes : 0.0;
  return m;
}

}  // namespace

double percentile_nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty set");
  if (q <= 0.0 || q > 100.0) throw Error("percentile must be in (0, 100]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * values.size()));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

FlowMetrics flow_metrics(const EpisodeLog& log, std::size_t flow) {
  if (flow >= log.flows.size()) throw Error("no such flow in episode log");
  const auto& f = log.flows[flow];
  std::vector<double> rtts;
  rtts.reserve(f.acks.size());
  double delivered = 0.0;
  for (const auto& a : f.acks) {
    rtts.push_back(a.rtt_ms);
    delivered += a.delivered_bytes;
  }
  const double duration = static_cast<double>(log.duration_ms - f.start_ms);
  return summarize(std::move(rtts), delivered, offered_bytes_since(log, f.start_ms), duration,
                   log.mrtt_ms);
}

FlowMetrics aggregate_metrics(const EpisodeLog& log) {
  std::vector<double> rtts;
  double delivered = 0.0;
  std::int64_t start = log.duration_ms;
  for (const auto& f : log.flows) {
    start = std::min(start, f.start_ms);
    for (const auto& a : f.acks) {
      rtts.push_back(a.rtt_ms);
      delivered += a.delivered_bytes;
    }
  }
  return summarize(std::move(rtts), delivered, offered_bytes_since(log, start),
                   static_cast<double>(log.duration_ms - start), log.mrtt_ms);
}

double jain_index(std::span<const double> rates) {
  if (rates.empty()) throw Error("Jain index needs at least one rate");
  double sum = 0.0, sq = 0.0;
  for (double r : rates) {
    if (r < 0.0) throw Error("Jain index needs non-negative rates");
    sum += r;
    sq += r * r;
  }
  if (sq == 0.0) throw Error("Jain index of all-zero rates is undefined");
  return sum * sum / (static_cast<double>(rates.size()) * sq);
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "buffer" || name == "buffer_bytes") return SweepAxis::kBufferBytes;
  if (name == "mrtt" || name == "mrtt_ms") return SweepAxis::kMrttMs;
  if (name == "target" || name == "target_ms") return SweepAxis::kTargetMs;
  throw Error("unknown sweep axis: " + name);
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBufferBytes: return "buffer_bytes";
    case SweepAxis::kMrttMs: return "mrtt_ms";
    case SweepAxis::kTargetMs: return "target_ms";
  }
  return "unknown";
}

std::vector<SweepRow> sweep(SweepAxis axis, const std::vector<double>& values, SchemeId scheme,
                            ActionPolicy* policy, const Trace& trace, const SimConfig& cfg,
                            const ShimConfig& shim) {
  if (values.empty()) throw Error("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (const bool with_plugin : {false, true}) {
    if (with_plugin && policy == nullptr) break;
    if (!with_plugin && scheme == SchemeId::kCleanSlate) continue;
    for (double v : values) {
      SimConfig c = cfg;
      ShimConfig s = shim;
      switch (axis) {
        case SweepAxis::kBufferBytes: c.buffer_bytes = static_cast<std::int64_t>(v); break;
        case SweepAxis::kMrttMs: c.mrtt_ms = static_cast<int>(v); break;
        case SweepAxis::kTargetMs: s.target_ms = v; break;
      }
      const EpisodeLog log = run_episode(scheme, with_plugin ? policy : nullptr, trace, c, s);
      rows.push_back({v, with_plugin ? "deepcc" : "raw", flow_metrics(log)});
    }
  }
  return rows;
}

std::string metrics_csv_header() {
  return "avg_delay_ms,avg_queuing_delay_ms,p95_delay_ms,throughput_bps,utilization";
}

std::string metrics_csv_fields(const FlowMetrics& m) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.1f,%.6f", m.avg_delay_ms,
                m.avg_queuing_delay_ms, m.p95_delay_ms, m.throughput_bps, m.utilization);
  return buf;
}

void write_sweep_csv(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  out << to_string(axis) << ",mode," << metrics_csv_header() << '\n';
  for (const auto& r : rows) {
    char v[64];
    std::snprintf(v, sizeof(v), "%g", r.value);
    out << v << ',' << r.mode << ',' << metrics_csv_fields(r.metrics) << '\n';
  }
}

}  // namespace deepcc
