#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "deepcc/events.hpp"

namespace deepcc {

enum class SchemeId { kAimd, kCubic, kWestwood, kIllinois, kCleanSlate };

SchemeId parse_scheme_id(std::string_view name);
std::string to_string(SchemeId id);

struct SchemeParams {
  double initial_cwnd = 10.0;  // packets
  int mtu_bytes = 1500;
  double hard_max_cwnd = 4000.0;
};

// Window-based congestion control state machine. cwnd is in packets and may
// be fractional; the sender rounds down (never below one packet).
class CcScheme {
 public:
  virtual ~CcScheme() = default;

  virtual SchemeId id() const = 0;
  virtual void on_ack(const AckEvent& ack) = 0;
  // Fast-retransmit style loss (duplicate acks). One call per loss episode.
  virtual void on_loss(std::int64_t now_ms) = 0;
  virtual void on_rto(std::int64_t now_ms) = 0;
  virtual double cwnd() const = 0;
  virtual void reset() = 0;

  // Replaces cwnd by `cap` when it exceeds it; the scheme keeps its other
  // state and continues from the capped value.
  virtual void cap_cwnd(double cap) = 0;
};

// Reno-style slow start / congestion avoidance (one packet per window of
// acks) with multiplicative decrease 1/2.
class Aimd final : public CcScheme {
 public:
  explicit Aimd(const SchemeParams& params = {});
  SchemeId id() const override { return SchemeId::kAimd; }
  void on_ack(const AckEvent& ack) override;
  void on_loss(std::int64_t now_ms) override;
  void on_rto(std::int64_t now_ms) override;
  double cwnd() const override { return cwnd_; }
  void reset() override;
  void cap_cwnd(double cap) override;

  double ssthresh() const { return ssthresh_; }
  // Enters congestion avoidance directly (ssthresh = cwnd).
  void set_state(double cwnd, double ssthresh);

 private:
  SchemeParams params_;
  double cwnd_;
  double ssthresh_;
  double acked_ = 0.0;  // acks counted toward the next +1 in avoidance
};

class Cubic final : public CcScheme {
 public:
  static constexpr double kC = 0.4;
  static constexpr double kBeta = 0.3;  // window reduction fraction on loss

  explicit Cubic(const SchemeParams& params = {});
  SchemeId id() const override { return SchemeId::kCubic; }
  void on_ack(const AckEvent& ack) override;
  void on_loss(std::int64_t now_ms) override;
  void on_rto(std::int64_t now_ms) override;
  double cwnd() const override { return cwnd_; }
  void reset() override;
  void cap_cwnd(double cap) override;

  double w_max() const { return w_max_; }
  double k_seconds() const { return k_; }
  // Cubic growth function W(t) for t seconds since the epoch start.
  double window_at(double t_seconds) const;

 private:
  void start_epoch(std::int64_t now_ms);

  SchemeParams params_;
  double cwnd_;
  double ssthresh_;
  double w_max_ = 0.0;
  double k_ = 0.0;
  double origin_ = 0.0;  // W(t) plateau for the current epoch
  std::int64_t epoch_start_ms_ = -1;
  double srtt_ms_ = 0.0;
};

// Westwood+: bandwidth estimate from the ack stream sets ssthresh after loss.
class Westwood final : public CcScheme {
 public:
  explicit Westwood(const SchemeParams& params = {});
  SchemeId id() const override { return SchemeId::kWestwood; }
  void on_ack(const AckEvent& ack) override;
  void on_loss(std::int64_t now_ms) override;
  void on_rto(std::int64_t now_ms) override;
  double cwnd() const override { return cwnd_; }
  void reset() override;
  void cap_cwnd(double cap) override;

  double ssthresh() const { return ssthresh_; }
  double bandwidth_estimate_bps() const { return bwe_bytes_per_ms_ * 8000.0; }
  double min_rtt_ms() const { return min_rtt_ms_; }
  // BWE x RTTmin in packets, i.e. the post-loss ssthresh.
  double bdp_packets() const;

 private:
  SchemeParams params_;
  double cwnd_;
  double ssthresh_;
  double bwe_bytes_per_ms_ = 0.0;
  double last_sample_ = 0.0;
  double pending_bytes_ = 0.0;
  std::int64_t last_sample_ms_ = -1;
  double min_rtt_ms_ = 0.0;
  double acked_ = 0.0;
};

// TCP Illinois: AIMD whose increase/decrease factors follow queuing delay.
class Illinois final : public CcScheme {
 public:
  static constexpr double kAlphaMax = 10.0;
  static constexpr double kAlphaMin = 0.3;
  static constexpr double kBetaMin = 1.0 / 8.0;
  static constexpr double kBetaMax = 1.0 / 2.0;

  explicit Illinois(const SchemeParams& params = {});
  SchemeId id() const override { return SchemeId::kIllinois; }
  void on_ack(const AckEvent& ack) override;
  void on_loss(std::int64_t now_ms) override;
  void on_rto(std::int64_t now_ms) override;
  double cwnd() const override { return cwnd_; }
  void reset() override;
  void cap_cwnd(double cap) override;

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  // Curves in terms of average queuing delay `da` and the maximum observed
  // queuing delay `dm` (both ms).
  static double alpha_curve(double da, double dm);
  static double beta_curve(double da, double dm);

 private:
  void end_round();

  SchemeParams params_;
  double cwnd_;
  double ssthresh_;
  double alpha_ = kAlphaMax;
  double beta_ = kBetaMax;
  double base_rtt_ = 0.0;
  double max_rtt_ = 0.0;
  double round_sum_ = 0.0;
  int round_acks_ = 0;
  std::int64_t round_start_ms_ = -1;
};

// Window owned entirely by an external controller: acks and losses leave it
// untouched, `apply_alpha` multiplies it by 2^alpha.
class CleanSlate final : public CcScheme {
 public:
  explicit CleanSlate(const SchemeParams& params = {});
  SchemeId id() const override { return SchemeId::kCleanSlate; }
  void on_ack(const AckEvent&) override {}
  void on_loss(std::int64_t) override {}
  void on_rto(std::int64_t) override {}
  double cwnd() const override { return cwnd_; }
  void reset() override { cwnd_ = params_.initial_cwnd; }
  void cap_cwnd(double cap) override;

  void apply_alpha(double alpha);

 private:
  SchemeParams params_;
  double cwnd_;
};

std::unique_ptr<CcScheme> make_scheme(SchemeId id, const SchemeParams& params = {});

}  // namespace deepcc
