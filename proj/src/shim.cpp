#include "deepcc/shim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepcc/error.hpp"

namespace deepcc {

StateVector::StateVector(std::size_t m) : m_(m), values_(m * kFeatureCount, 0.0) {
  if (m == 0) throw Error("state history length must be positive");
}

void StateVector::push(const ObservationFeatures& o) {
  // Shift older observations one slot back; the oldest falls off the end.
  std::copy_backward(values_.begin(), values_.end() - kFeatureCount, values_.end());
  const auto a = o.as_array();
  std::copy(a.begin(), a.end(), values_.begin());
  filled_ = std::min(filled_ + 1, m_);
}

void StateVector::clear() {
  std::fill(values_.begin(), values_.end(), 0.0);
  filled_ = 0;
}

int kernel(double d, double target_ms) { return d > target_ms ? 0 : 1; }

ObservationFeatures featurize(const MonitorSample& s, double target_ms, const FeatureNorms& norms,
                              bool use_kernel) {
  if (target_ms <= 0.0) throw Error("Target must be positive");
  ObservationFeatures o;
  const double ratio = s.d / target_ms;
  o.cwnd_norm = s.cwnd / norms.cwnd_scale;
  if (!use_kernel) {
    o.phi_p = s.p / norms.p_scale;
    o.phi_n = s.n / norms.n_scale;
    o.phi_d = {ratio, 0.0};
    return o;
  }
  const int k = kernel(s.d, target_ms);
  o.phi_p = s.p / norms.p_scale * k;
  o.phi_n = s.n / norms.n_scale * k;
  o.phi_d = {(1.0 - ratio) * k, ratio * (1 - k)};
  return o;
}

StateVector push_state(StateVector sv, const ObservationFeatures& o) {
  sv.push(o);
  return sv;
}

MonitorSample monitor_aggregate(std::span<const AckEvent> acks, double cwnd, double window_ms,
                                double previous_d) {
  MonitorSample s;
  s.cwnd = cwnd;
  s.period_ms = window_ms;
  s.n = static_cast<int>(acks.size());
  if (acks.empty()) {
    s.d = previous_d;
    return s;
  }
  double rtt_sum = 0.0, bytes = 0.0;
  for (const auto& a : acks) {
    rtt_sum += a.rtt_ms;
    bytes += a.delivered_bytes;
  }
  s.d = rtt_sum / s.n;
  s.p = window_ms > 0.0 ? bytes / (window_ms / 1000.0) : 0.0;
  return s;
}

double reward(const MonitorSample& s, const RewardState& prev, const FeatureNorms& norms) {
  if (prev.target_ms <= 0.0) throw Error("Target must be positive");
  const int total = s.n + prev.n_pre;
  if (total <= 0) return 0.0;
  const double w = (s.n * s.d + prev.n_pre * prev.d_pre) / total;
  const double magnitude = (w / prev.target_ms) * (s.p / norms.p_scale) * s.n;
  return s.d > prev.target_ms ? -magnitude : magnitude;
}

double apply_action(double alpha, double cwnd) {
  return std::max(1.0, std::round(std::exp2(alpha) * cwnd));
}

DeepccShim::DeepccShim(const ShimConfig& cfg)
    : cfg_(cfg), state_(cfg.history), cap_(std::numeric_limits<double>::infinity()) {
  reward_state_.target_ms = cfg.target_ms;
  if (cfg.target_ms <= 0.0) throw Error("Target must be positive");
}

void DeepccShim::start(std::int64_t now_ms) { period_start_ms_ = now_ms; }

void DeepccShim::on_ack(const AckEvent& ack) {
  srtt_ms_ = srtt_ms_ == 0.0 ? ack.rtt_ms : 0.875 * srtt_ms_ + 0.125 * ack.rtt_ms;
  window_.push_back(ack);
}

bool DeepccShim::period_due(std::int64_t now_ms) const {
  return static_cast<double>(now_ms - period_start_ms_) >= std::max(srtt_ms_, cfg_.min_period_ms);
}

PeriodOutcome DeepccShim::close_period(std::int64_t now_ms, double cwnd) {
  PeriodOutcome out;
  const double window_ms = static_cast<double>(now_ms - period_start_ms_);
  out.sample = monitor_aggregate(window_, cwnd, window_ms, latest_.d);
  out.features = featurize(out.sample, cfg_.target_ms, cfg_.norms, cfg_.use_kernel);
  out.reward = reward(out.sample, reward_state_, cfg_.norms);
  state_.push(out.features);
  reward_state_.n_pre = out.sample.n;
  reward_state_.d_pre = out.sample.d;
  latest_ = out.sample;
  window_.clear();
  period_start_ms_ = now_ms;
  return out;
}

double DeepccShim::set_action(double alpha, double cwnd) {
  cap_ = apply_action(std::clamp(alpha, -1.0, 1.0), cwnd);
  return cap_;
}

}  // namespace deepcc
