#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deepcc/cc.hpp"
#include "deepcc/events.hpp"
#include "deepcc/shim.hpp"
#include "deepcc/trace.hpp"

namespace deepcc {

struct SimConfig {
  int mrtt_ms = 20;
  std::int64_t buffer_bytes = 150000;
  int tick_ms = 1;
  bool per_flow_queues = true;
  std::int64_t episode_ms = 60000;

  void validate(int mtu_bytes) const;
};

struct Packet {
  int flow_id = 0;
  std::int64_t seq = 0;
  int size_bytes = 0;
  std::int64_t sent_at_ms = 0;
  std::int64_t delivered_at_ms = -1;
};

// Drop-tail FIFO with a byte budget.
class BottleneckQueue {
 public:
  explicit BottleneckQueue(std::int64_t capacity_bytes) : capacity_(capacity_bytes) {}

  // Accepted iff occupancy + size <= capacity.
  bool enqueue(const Packet& pkt);
  Packet pop();
  bool empty() const { return packets_.empty(); }
  std::size_t size() const { return packets_.size(); }
  std::int64_t bytes() const { return bytes_; }
  std::int64_t capacity() const { return capacity_; }

 private:
  std::int64_t capacity_;
  std::int64_t bytes_ = 0;
  std::deque<Packet> packets_;
};

// Source of cwnd-cap actions for a plug-in enabled flow.
class ActionPolicy {
 public:
  virtual ~ActionPolicy() = default;
  virtual double act(const StateVector& state) = 0;
};

class ConstantPolicy final : public ActionPolicy {
 public:
  explicit ConstantPolicy(double alpha) : alpha_(alpha) {}
  double act(const StateVector&) override { return alpha_; }

 private:
  double alpha_;
};

struct FlowSetup {
  SchemeId scheme = SchemeId::kCubic;
  SchemeParams scheme_params{};
  std::optional<ShimConfig> plugin;  // none: raw scheme
  std::int64_t start_ms = 0;
};

struct TickRecord {
  std::int64_t t = 0;
  std::int64_t queue_bytes = 0;
  std::int64_t capacity_bytes = 0;  // opportunities at this ms x mtu
  std::int64_t sent = 0;            // cumulative packet counters
  std::int64_t delivered = 0;
  std::int64_t queued = 0;
  std::int64_t in_flight = 0;
  std::int64_t dropped = 0;
  bool operator==(const TickRecord&) const = default;
};

struct FlowTickRecord {
  double cwnd = 0.0;
  double cwnd_max = 0.0;  // +inf without a cap
  std::int64_t in_flight = 0;
  bool operator==(const FlowTickRecord&) const = default;
};

struct AckRecord {
  std::int64_t t = 0;
  double rtt_ms = 0.0;
  int delivered_bytes = 0;
  bool operator==(const AckRecord&) const = default;
};

struct FlowLog {
  std::int64_t start_ms = 0;
  std::vector<AckRecord> acks;
  std::vector<std::int64_t> loss_times;  // detected losses (dup-ack or RTO)
  std::vector<FlowTickRecord> ticks;     // one per tick since t = 0
  std::int64_t sent = 0;
  std::int64_t dropped = 0;
  std::int64_t delivered_bytes = 0;      // acked
  // Largest excess of sender in-flight over the effective window observed
  // right after a transmission; <= 1 by the cap rule.
  double max_cap_excess = 0.0;
  bool operator==(const FlowLog&) const = default;
};

struct EpisodeLog {
  int mrtt_ms = 0;
  int mtu_bytes = 0;
  std::int64_t duration_ms = 0;
  std::vector<TickRecord> ticks;
  std::vector<FlowLog> flows;
  bool conservation_held = true;
  std::int64_t opportunities_consumed = 0;  // used to serve a packet
  std::int64_t opportunities_offered = 0;

  void write_ack_csv(std::ostream& out) const;
  void write_tick_csv(std::ostream& out) const;
  void write_binary(std::ostream& out) const;
  static EpisodeLog read_binary(std::istream& in);
  bool operator==(const EpisodeLog&) const = default;
};

// Discrete-event world with a 1 ms quantum. Per tick: acks due now reach
// their senders, senders transmit up to their effective window, the link
// serves one queued packet per delivery opportunity, and served packets
// arrive mrtt/2 later with their acks back after another mrtt/2.
class World {
 public:
  World(const Trace& trace, const SimConfig& cfg, std::vector<FlowSetup> flows,
        bool record = true, std::int64_t trace_offset_ms = 0);
  ~World();
  World(World&&) noexcept;
  World& operator=(World&&) noexcept;

  void tick();
  std::int64_t now() const { return now_; }
  std::size_t flow_count() const;

  // Plug-in access; nullptr for raw flows.
  DeepccShim* shim(std::size_t flow);
  CcScheme& scheme(std::size_t flow);
  std::int64_t in_flight(std::size_t flow) const;
  double effective_cwnd(std::size_t flow) const;

  bool decision_due(std::size_t flow) const;
  PeriodOutcome close_period(std::size_t flow);
  // Applies an agent action: caps the scheme, or drives a clean-slate window.
  void apply_alpha(std::size_t flow, double alpha);

  const EpisodeLog& log() const;
  EpisodeLog take_log();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::int64_t now_ = 0;
};

// Runs one episode. `policies[i]` drives flow i's plug-in (ignored for raw
// flows; required for plug-in flows and for clean-slate schemes).
EpisodeLog run_episode(const Trace& trace, const SimConfig& cfg, std::vector<FlowSetup> flows,
                       const std::vector<ActionPolicy*>& policies,
                       std::int64_t trace_offset_ms = 0);

// Single-flow convenience form.
EpisodeLog run_episode(SchemeId scheme, ActionPolicy* plugin, const Trace& trace,
                       const SimConfig& cfg, const ShimConfig& shim_cfg = {},
                       std::int64_t trace_offset_ms = 0);

}  // namespace deepcc
