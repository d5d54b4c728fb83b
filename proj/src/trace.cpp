#include "deepcc/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "deepcc/error.hpp"
#include "deepcc/rng.hpp"

namespace deepcc {

Trace::Trace(std::vector<std::int64_t> opportunities, int mtu_bytes)
    : opportunities_(std::move(opportunities)), mtu_bytes_(mtu_bytes) {
  if (mtu_bytes_ <= 0) throw Error("trace mtu must be positive");
  for (std::size_t i = 0; i < opportunities_.size(); ++i) {
    if (opportunities_[i] < 0) throw ParseError("negative timestamp", i + 1);
    if (i > 0 && opportunities_[i] < opportunities_[i - 1])
      throw ParseError("timestamps must be non-decreasing", i + 1);
  }
  if (!opportunities_.empty()) {
    per_ms_.assign(static_cast<std::size_t>(period_ms()), 0);
    for (auto t : opportunities_) ++per_ms_[static_cast<std::size_t>(t)];
  }
}

std::int64_t Trace::period_ms() const {
  return opportunities_.empty() ? 0 : opportunities_.back() + 1;
}

int Trace::opportunities_at(std::int64_t t) const {
  if (per_ms_.empty() || t < 0) return 0;
  return per_ms_[static_cast<std::size_t>(t % static_cast<std::int64_t>(per_ms_.size()))];
}

Trace parse_trace(std::string_view text, int mtu_bytes) {
  std::vector<std::int64_t> ts;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), value);
    if (ec != std::errc() || ptr != line.data() + line.size())
      throw ParseError("not an integer millisecond timestamp: '" + std::string(line) + "'",
                       line_no);
    if (value < 0) throw ParseError("negative timestamp", line_no);
    if (!ts.empty() && value < ts.back())
      throw ParseError("timestamp decreases (" + std::to_string(value) + " after " +
                           std::to_string(ts.back()) + ")",
                       line_no);
    ts.push_back(value);
  }
  return Trace(std::move(ts), mtu_bytes);
}

std::string serialize_trace(const Trace& trace) {
  std::string out;
  out.reserve(trace.size() * 7);
  for (auto t : trace.opportunities()) {
    out += std::to_string(t);
    out += '\n';
  }
  return out;
}

Trace load_trace(const std::string& path, int mtu_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open trace file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_trace(ss.str(), mtu_bytes);
}

void save_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write trace file: " + path);
  out << serialize_trace(trace);
  if (!out) throw Error("failed writing trace file: " + path);
}

TraceStats trace_capacity_stats(const Trace& trace, std::int64_t bucket_ms, std::int64_t span_ms) {
  if (trace.empty()) throw Error("capacity stats of an empty trace");
  if (bucket_ms <= 0) throw Error("bucket width must be positive");
  if (span_ms <= 0) span_ms = trace.period_ms();
  const auto buckets = static_cast<std::size_t>((span_ms + bucket_ms - 1) / bucket_ms);
  std::vector<double> counts(buckets, 0.0);
  for (auto t : trace.opportunities()) {
    auto b = static_cast<std::size_t>(t / bucket_ms);
    if (b < buckets) counts[b] += 1.0;
  }
  const double to_mbps = trace.mtu_bytes() * 8.0 / (bucket_ms / 1000.0) / 1e6;
  const double n = static_cast<double>(buckets);
  TraceStats s;
  s.min = s.max = counts[0] * to_mbps;
  double sum = 0.0;
  for (double c : counts) {
    const double r = c * to_mbps;
    sum += r;
    s.min = std::min(s.min, r);
    s.max = std::max(s.max, r);
  }
  s.mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double c : counts) {
    const double d = c * to_mbps - s.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  s.std_dev = std::sqrt(m2);
  if (m2 > 1e-18) {
    s.skewness = m3 / std::pow(m2, 1.5);
    s.kurtosis = m4 / (m2 * m2);
  }
  return s;
}

std::string stats_csv_header() { return "mean,std,skew,kurt,min,max"; }

std::string stats_csv_row(const TraceStats& s) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << s.mean << ',' << s.std_dev << ',' << s.skewness << ',' << s.kurtosis << ','
      << s.min << ',' << s.max;
  return out.str();
}

namespace {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct Moments {
  double mean;
  double std;
};

Moments truncated_moments(double mu, double sigma, double lo, double hi) {
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  const double z = std::max(normal_cdf(b) - normal_cdf(a), 1e-300);
  const double pa = normal_pdf(a), pb = normal_pdf(b);
  const double shift = (pa - pb) / z;
  const double var = sigma * sigma * (1.0 + (a * pa - b * pb) / z - shift * shift);
  return {mu + sigma * shift, std::sqrt(std::max(var, 0.0))};
}

// Parameters of the parent normal whose truncation to [lo, hi] has the
// requested mean and standard deviation.
Moments calibrate_parent(double mean, double std, double lo, double hi) {
  double mu = mean, sigma = std;
  for (int i = 0; i < 500; ++i) {
    const Moments m = truncated_moments(mu, sigma, lo, hi);
    mu += mean - m.mean;
    if (m.std > 1e-12) sigma *= std::clamp(std / m.std, 0.5, 2.0);
    if (std::abs(m.mean - mean) < 1e-9 && std::abs(m.std - std) < 1e-9) break;
  }
  return {mu, sigma};
}

}  // namespace

Trace generate_synthetic_trace(const SynthTraceConfig& cfg) {
  if (cfg.duration_s <= 0.0) throw Error("synthetic trace duration must be positive");
  if (cfg.min_rate < 0.0 || cfg.min_rate > cfg.max_rate)
    throw Error("synthetic trace needs 0 <= min_rate <= max_rate");
  if (cfg.max_rate <= 0.0) throw Error("max_rate = 0 yields an empty trace");
  if (cfg.dwell_ms <= 0.0) throw Error("dwell time must be positive");

  Rng rng = make_stream(cfg.seed, "trace");
  const bool degenerate = cfg.max_rate - cfg.min_rate < 1e-12 || cfg.target_std <= 0.0;
  const Moments parent = degenerate
                             ? Moments{std::clamp(cfg.target_mean, cfg.min_rate, cfg.max_rate), 0.0}
                             : calibrate_parent(cfg.target_mean, cfg.target_std, cfg.min_rate,
                                                cfg.max_rate);
  std::normal_distribution<double> gauss(parent.mean, std::max(parent.std, 1e-12));
  std::exponential_distribution<double> dwell(1.0 / cfg.dwell_ms);

  auto draw_rate = [&]() {
    if (degenerate) return parent.mean;
    for (int tries = 0; tries < 1000; ++tries) {
      const double r = gauss(rng);
      if (r >= cfg.min_rate && r <= cfg.max_rate) return r;
    }
    return std::clamp(gauss(rng), cfg.min_rate, cfg.max_rate);
  };

  const auto duration_ms = static_cast<std::int64_t>(std::llround(cfg.duration_s * 1000.0));
  std::vector<std::int64_t> ts;
  ts.reserve(static_cast<std::size_t>(cfg.target_mean * 125.0 / cfg.mtu_bytes * duration_ms) + 16);
  double credit = 0.0;
  double rate = draw_rate();
  std::int64_t next_change = std::max<std::int64_t>(1, std::llround(dwell(rng)));
  for (std::int64_t t = 0; t < duration_ms; ++t) {
    if (t >= next_change) {
      rate = draw_rate();
      next_change = t + std::max<std::int64_t>(1, std::llround(dwell(rng)));
    }
    credit += rate * 125.0;  // Mbps -> bytes per ms
    while (credit >= cfg.mtu_bytes) {
      ts.push_back(t);
      credit -= cfg.mtu_bytes;
    }
  }
  return Trace(std::move(ts), cfg.mtu_bytes);
}

Trace constant_trace(std::int64_t duration_ms, int per_ms, int mtu_bytes) {
  std::vector<std::int64_t> ts;
  ts.reserve(static_cast<std::size_t>(duration_ms * per_ms));
  for (std::int64_t t = 0; t < duration_ms; ++t)
    for (int k = 0; k < per_ms; ++k) ts.push_back(t);
  return Trace(std::move(ts), mtu_bytes);
}

}  // namespace deepcc
