#include "deepcc/cc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepcc/error.hpp"

namespace deepcc {

namespace {
constexpr double kInfSsthresh = std::numeric_limits<double>::infinity();

// Slow start adds one packet per ack; congestion avoidance adds one packet
// once a full window of acks has arrived.
void reno_increase(double& cwnd, double ssthresh, double& acked) {
  if (cwnd < ssthresh) {
    cwnd += 1.0;
    return;
  }
  acked += 1.0;
  if (acked >= std::max(1.0, std::floor(cwnd))) {
    cwnd += 1.0;
    acked = 0.0;
  }
}
}  // namespace

SchemeId parse_scheme_id(std::string_view name) {
  if (name == "aimd" || name == "reno" || name == "newreno") return SchemeId::kAimd;
  if (name == "cubic") return SchemeId::kCubic;
  if (name == "westwood") return SchemeId::kWestwood;
  if (name == "illinois") return SchemeId::kIllinois;
  if (name == "clean_slate_drl" || name == "clean_slate") return SchemeId::kCleanSlate;
  throw Error("unknown congestion control scheme: " + std::string(name));
}

std::string to_string(SchemeId id) {
  switch (id) {
    case SchemeId::kAimd: return "aimd";
    case SchemeId::kCubic: return "cubic";
    case SchemeId::kWestwood: return "westwood";
    case SchemeId::kIllinois: return "illinois";
    case SchemeId::kCleanSlate: return "clean_slate_drl";
  }
  return "unknown";
}

// ---- AIMD ----

Aimd::Aimd(const SchemeParams& params)
    : params_(params), cwnd_(params.initial_cwnd), ssthresh_(kInfSsthresh) {}

void Aimd::on_ack(const AckEvent&) { reno_increase(cwnd_, ssthresh_, acked_); }

void Aimd::on_loss(std::int64_t) {
  ssthresh_ = std::max(cwnd_ / 2.0, 1.0);
  cwnd_ = ssthresh_;
}

void Aimd::on_rto(std::int64_t) {
  ssthresh_ = std::max(cwnd_ / 2.0, 2.0);
  cwnd_ = 1.0;
}

void Aimd::reset() {
  cwnd_ = params_.initial_cwnd;
  ssthresh_ = kInfSsthresh;
  acked_ = 0.0;
}

void Aimd::cap_cwnd(double cap) { cwnd_ = std::max(1.0, std::min(cwnd_, cap)); }

void Aimd::set_state(double cwnd, double ssthresh) {
  cwnd_ = std::max(cwnd, 1.0);
  ssthresh_ = ssthresh;
  acked_ = 0.0;
}

// ---- Cubic ----

Cubic::Cubic(const SchemeParams& params)
    : params_(params), cwnd_(params.initial_cwnd), ssthresh_(kInfSsthresh) {}

double Cubic::window_at(double t) const {
  const double dt = t - k_;
  return kC * dt * dt * dt + origin_;
}

void Cubic::start_epoch(std::int64_t now_ms) {
  epoch_start_ms_ = now_ms;
  if (cwnd_ < w_max_) {
    k_ = std::cbrt((w_max_ - cwnd_) / kC);
    origin_ = w_max_;
  } else {
    k_ = 0.0;
    origin_ = cwnd_;
  }
}

void Cubic::on_ack(const AckEvent& ack) {
  srtt_ms_ = srtt_ms_ == 0.0 ? ack.rtt_ms : 0.875 * srtt_ms_ + 0.125 * ack.rtt_ms;
  if (cwnd_ < ssthresh_) {
    cwnd_ += 1.0;
    return;
  }
  if (epoch_start_ms_ < 0) start_epoch(ack.time_ms);
  const double t = (ack.time_ms - epoch_start_ms_) / 1000.0;
  double target = window_at(t);
  // TCP-friendly region: never grow slower than Reno with the same beta.
  const double rtt_s = std::max(srtt_ms_, 1.0) / 1000.0;
  const double w_est = w_max_ * (1.0 - kBeta) + 3.0 * kBeta / (2.0 - kBeta) * (t / rtt_s);
  target = std::max(target, w_est);
  if (target > cwnd_)
    cwnd_ += (target - cwnd_) / cwnd_;
  else
    cwnd_ += 0.01 / cwnd_;
  cwnd_ = std::min(cwnd_, params_.hard_max_cwnd);
}

void Cubic::on_loss(std::int64_t now_ms) {
  w_max_ = cwnd_;
  cwnd_ = std::max(cwnd_ * (1.0 - kBeta), 1.0);
  ssthresh_ = cwnd_;
  // The epoch starts at the loss, so cwnd == W(0) == (1 - beta) W_max.
  epoch_start_ms_ = now_ms;
  k_ = std::cbrt(w_max_ * kBeta / kC);
  origin_ = w_max_;
}

void Cubic::on_rto(std::int64_t) {
  w_max_ = cwnd_;
  ssthresh_ = std::max(cwnd_ * (1.0 - kBeta), 2.0);
  cwnd_ = 1.0;
  epoch_start_ms_ = -1;
}

void Cubic::reset() {
  cwnd_ = params_.initial_cwnd;
  ssthresh_ = kInfSsthresh;
  w_max_ = k_ = origin_ = srtt_ms_ = 0.0;
  epoch_start_ms_ = -1;
}

void Cubic::cap_cwnd(double cap) { cwnd_ = std::max(1.0, std::min(cwnd_, cap)); }

// ---- Westwood+ ----

Westwood::Westwood(const SchemeParams& params)
    : params_(params), cwnd_(params.initial_cwnd), ssthresh_(kInfSsthresh) {}

void Westwood::on_ack(const AckEvent& ack) {
  if (min_rtt_ms_ == 0.0 || ack.rtt_ms < min_rtt_ms_) min_rtt_ms_ = ack.rtt_ms;

  // Tustin-discretised low-pass filter over per-interval rate samples.
  pending_bytes_ += ack.delivered_bytes;
  if (last_sample_ms_ < 0) {
    last_sample_ms_ = ack.time_ms;
    pending_bytes_ = 0.0;
  } else if (ack.time_ms > last_sample_ms_) {
    const double sample = pending_bytes_ / static_cast<double>(ack.time_ms - last_sample_ms_);
    constexpr double kA = 0.9047;
    bwe_bytes_per_ms_ = kA * bwe_bytes_per_ms_ + (1.0 - kA) / 2.0 * (sample + last_sample_);
    last_sample_ = sample;
    last_sample_ms_ = ack.time_ms;
    pending_bytes_ = 0.0;
  }

  reno_increase(cwnd_, ssthresh_, acked_);
}

double Westwood::bdp_packets() const {
  return bwe_bytes_per_ms_ * min_rtt_ms_ / params_.mtu_bytes;
}

void Westwood::on_loss(std::int64_t) {
  if (bwe_bytes_per_ms_ <= 0.0 || min_rtt_ms_ <= 0.0) {
    ssthresh_ = std::max(cwnd_ / 2.0, 1.0);
    cwnd_ = ssthresh_;
    return;
  }
  ssthresh_ = std::max(bdp_packets(), 2.0);
  cwnd_ = std::min(cwnd_, ssthresh_);
}

void Westwood::on_rto(std::int64_t) {
  ssthresh_ = bwe_bytes_per_ms_ > 0.0 ? std::max(bdp_packets(), 2.0) : std::max(cwnd_ / 2.0, 2.0);
  cwnd_ = 1.0;
}

void Westwood::reset() {
  cwnd_ = params_.initial_cwnd;
  ssthresh_ = kInfSsthresh;
  bwe_bytes_per_ms_ = last_sample_ = pending_bytes_ = min_rtt_ms_ = acked_ = 0.0;
  last_sample_ms_ = -1;
}

void Westwood::cap_cwnd(double cap) { cwnd_ = std::max(1.0, std::min(cwnd_, cap)); }

// ---- Illinois ----

double Illinois::alpha_curve(double da, double dm) {
  if (dm <= 0.0) return kAlphaMax;
  const double d1 = 0.01 * dm;
  if (da <= d1) return kAlphaMax;
  if (da >= dm) return kAlphaMin;
  const double k1 = (dm - d1) * kAlphaMin * kAlphaMax / (kAlphaMax - kAlphaMin);
  const double k2 = (dm - d1) * kAlphaMin / (kAlphaMax - kAlphaMin) - d1;
  return k1 / (k2 + da);
}

double Illinois::beta_curve(double da, double dm) {
  if (dm <= 0.0) return kBetaMin;
  const double d2 = 0.1 * dm;
  const double d3 = 0.8 * dm;
  if (da <= d2) return kBetaMin;
  if (da >= d3) return kBetaMax;
  return kBetaMin + (kBetaMax - kBetaMin) * (da - d2) / (d3 - d2);
}

Illinois::Illinois(const SchemeParams& params)
    : params_(params), cwnd_(params.initial_cwnd), ssthresh_(kInfSsthresh) {}

void Illinois::end_round() {
  if (round_acks_ == 0) return;
  const double avg = round_sum_ / round_acks_;
  const double da = std::max(avg - base_rtt_, 0.0);
  const double dm = std::max(max_rtt_ - base_rtt_, 0.0);
  alpha_ = alpha_curve(da, dm);
  beta_ = beta_curve(da, dm);
  round_sum_ = 0.0;
  round_acks_ = 0;
}

void Illinois::on_ack(const AckEvent& ack) {
  if (base_rtt_ == 0.0 || ack.rtt_ms < base_rtt_) base_rtt_ = ack.rtt_ms;
  max_rtt_ = std::max(max_rtt_, ack.rtt_ms);
  round_sum_ += ack.rtt_ms;
  ++round_acks_;
  if (round_start_ms_ < 0) round_start_ms_ = ack.time_ms;
  if (ack.time_ms - round_start_ms_ >= base_rtt_) {
    end_round();
    round_start_ms_ = ack.time_ms;
  }

  if (cwnd_ < ssthresh_)
    cwnd_ += 1.0;
  else
    cwnd_ += alpha_ / cwnd_;
  cwnd_ = std::min(cwnd_, params_.hard_max_cwnd);
}

void Illinois::on_loss(std::int64_t) {
  cwnd_ = std::max(cwnd_ * (1.0 - beta_), 1.0);
  ssthresh_ = cwnd_;
}

void Illinois::on_rto(std::int64_t) {
  ssthresh_ = std::max(cwnd_ / 2.0, 2.0);
  cwnd_ = 1.0;
  alpha_ = 1.0;
  beta_ = kBetaMax;
}

void Illinois::reset() {
  cwnd_ = params_.initial_cwnd;
  ssthresh_ = kInfSsthresh;
  alpha_ = kAlphaMax;
  beta_ = kBetaMax;
  base_rtt_ = max_rtt_ = round_sum_ = 0.0;
  round_acks_ = 0;
  round_start_ms_ = -1;
}

void Illinois::cap_cwnd(double cap) { cwnd_ = std::max(1.0, std::min(cwnd_, cap)); }

// ---- clean slate ----

CleanSlate::CleanSlate(const SchemeParams& params) : params_(params), cwnd_(params.initial_cwnd) {}

void CleanSlate::cap_cwnd(double cap) { cwnd_ = std::max(1.0, std::min(cwnd_, cap)); }

void CleanSlate::apply_alpha(double alpha) {
  alpha = std::clamp(alpha, -1.0, 1.0);
  cwnd_ = std::clamp(std::exp2(alpha) * cwnd_, 1.0, params_.hard_max_cwnd);
}

std::unique_ptr<CcScheme> make_scheme(SchemeId id, const SchemeParams& params) {
  switch (id) {
    case SchemeId::kAimd: return std::make_unique<Aimd>(params);
    case SchemeId::kCubic: return std::make_unique<Cubic>(params);
    case SchemeId::kWestwood: return std::make_unique<Westwood>(params);
    case SchemeId::kIllinois: return std::make_unique<Illinois>(params);
    case SchemeId::kCleanSlate: return std::make_unique<CleanSlate>(params);
  }
  throw Error("unknown scheme id");
}

}  // namespace deepcc
