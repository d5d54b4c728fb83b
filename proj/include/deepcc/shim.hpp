#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "deepcc/events.hpp"

namespace deepcc {

// Per-RTT aggregate handed from the monitor to the state generator.
struct MonitorSample {
  double d = 0.0;          // mean ack RTT in the window (ms)
  int n = 0;               // number of acks
  double p = 0.0;          // delivery rate (bytes/s)
  double cwnd = 0.0;       // underlying scheme's cwnd (packets)
  double period_ms = 0.0;  // actual window length
};

// Positive scale constants that bring raw statistics near unit range.
struct FeatureNorms {
  double p_scale = 12.5e6;  // bytes/s (100 Mbps)
  double n_scale = 100.0;
  double cwnd_scale = 1000.0;
};

inline constexpr std::size_t kFeatureCount = 5;

struct ObservationFeatures {
  double phi_p = 0.0;
  double phi_n = 0.0;
  std::array<double, 2> phi_d{};
  double cwnd_norm = 0.0;

  std::array<double, kFeatureCount> as_array() const {
    return {phi_p, phi_n, phi_d[0], phi_d[1], cwnd_norm};
  }
};

// Stacked history of the m most recent observations, newest first,
// zero-padded until m observations exist. Always 5*m scalars.
class StateVector {
 public:
  explicit StateVector(std::size_t m = 20);

  void push(const ObservationFeatures& o);
  std::size_t m() const { return m_; }
  std::size_t filled() const { return filled_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& data() const { return values_; }
  void clear();

 private:
  std::size_t m_;
  std::size_t filled_ = 0;
  std::vector<double> values_;
};

struct RewardState {
  int n_pre = 0;
  double d_pre = 0.0;
  double target_ms = 50.0;
};

// 1 while the delay meets the target (d <= Target), 0 otherwise.
int kernel(double d, double target_ms);

// With `use_kernel` false the filter is bypassed: raw p and n pass through
// and the delay is encoded as [d/Target, 0].
ObservationFeatures featurize(const MonitorSample& s, double target_ms, const FeatureNorms& norms,
                              bool use_kernel = true);

StateVector push_state(StateVector sv, const ObservationFeatures& o);

MonitorSample monitor_aggregate(std::span<const AckEvent> acks, double cwnd, double window_ms,
                                double previous_d);

// Signed, delay-weighted throughput reward. p is normalised by norms.p_scale.
double reward(const MonitorSample& s, const RewardState& prev, const FeatureNorms& norms = {});

// cwnd_max = round(2^alpha * cwnd), never below one packet.
double apply_action(double alpha, double cwnd);

struct ShimConfig {
  double target_ms = 50.0;
  std::size_t history = 20;  // m
  FeatureNorms norms{};
  bool use_kernel = true;
  double min_period_ms = 10.0;
};

struct PeriodOutcome {
  MonitorSample sample;
  ObservationFeatures features;
  double reward = 0.0;
};

// Sender-side plug-in: watches acks, closes one monitoring period per
// smoothed RTT, maintains the state history and the reward memory, and
// holds the current cwnd cap.
class DeepccShim {
 public:
  explicit DeepccShim(const ShimConfig& cfg = {});

  void start(std::int64_t now_ms);
  void on_ack(const AckEvent& ack);
  bool period_due(std::int64_t now_ms) const;
  PeriodOutcome close_period(std::int64_t now_ms, double cwnd);

  const StateVector& state() const { return state_; }
  const ShimConfig& config() const { return cfg_; }
  // Latest aggregate, readable by applications.
  const MonitorSample& latest_sample() const { return latest_; }
  double srtt_ms() const { return srtt_ms_; }

  double cap() const { return cap_; }
  // Sets cap = apply_action(alpha, cwnd) and returns it.
  double set_action(double alpha, double cwnd);

 private:
  ShimConfig cfg_;
  StateVector state_;
  RewardState reward_state_;
  MonitorSample latest_;
  std::vector<AckEvent> window_;
  std::int64_t period_start_ms_ = 0;
  double srtt_ms_ = 0.0;
  double cap_;
};

}  // namespace deepcc
