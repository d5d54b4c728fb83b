#include "deepcc/sim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "deepcc/error.hpp"

namespace deepcc {

void SimConfig::validate(int mtu_bytes) const {
  if (mrtt_ms < 2) throw Error("mrtt_ms must be at least 2");
  if (tick_ms != 1) throw Error("only a 1 ms tick is supported");
  if (mrtt_ms % tick_ms != 0) throw Error("tick_ms must divide mrtt_ms");
  if (buffer_bytes <= mtu_bytes) throw Error("buffer must hold more than one MTU");
  if (episode_ms <= 0) throw Error("episode length must be positive");
}

bool BottleneckQueue::enqueue(const Packet& pkt) {
  if (bytes_ + pkt.size_bytes > capacity_) return false;
  bytes_ += pkt.size_bytes;
  packets_.push_back(pkt);
  return true;
}

Packet BottleneckQueue::pop() {
  Packet p = packets_.front();
  packets_.pop_front();
  bytes_ -= p.size_bytes;
  return p;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct PendingDrop {
  std::int64_t seq;
  int dupacks;
};

struct Flow {
  int id = 0;
  std::unique_ptr<CcScheme> scheme;
  std::unique_ptr<DeepccShim> shim;
  std::int64_t start_ms = 0;
  bool started = false;

  std::int64_t next_seq = 0;
  std::int64_t acked = 0;
  std::int64_t detected_lost = 0;
  std::deque<PendingDrop> undetected_drops;
  std::int64_t recovery_seq = -1;  // losses at or below this belong to the last episode
  double srtt_ms = 0.0;
  std::int64_t last_progress_ms = 0;

  std::int64_t sender_in_flight() const { return next_seq - acked - detected_lost; }

  double window() const {
    double w = scheme->cwnd();
    if (shim) w = std::min(w, shim->cap());
    return std::max(1.0, std::floor(w));
  }
};

struct InTransit {
  Packet pkt;
  std::int64_t deliver_at;
};

struct AckInTransit {
  AckEvent ack;
};

}  // namespace

struct World::Impl {
  const Trace* trace;
  SimConfig cfg;
  bool record;
  std::int64_t offset;
  int mtu;
  int down_ms;
  int up_ms;
  std::vector<Flow> flows;
  std::vector<BottleneckQueue> queues;
  std::size_t rr = 0;
  std::deque<InTransit> downlink;
  std::deque<AckInTransit> uplink;

  std::int64_t sent = 0, delivered = 0, in_flight = 0, dropped = 0;
  EpisodeLog log;

  std::int64_t queued_packets() const {
    std::int64_t q = 0;
    for (const auto& b : queues) q += static_cast<std::int64_t>(b.size());
    return q;
  }
  std::int64_t queued_bytes() const {
    std::int64_t q = 0;
    for (const auto& b : queues) q += b.bytes();
    return q;
  }

  BottleneckQueue& queue_for(int flow) {
    return cfg.per_flow_queues ? queues[static_cast<std::size_t>(flow)] : queues[0];
  }

  void enforce_cap(Flow& f) {
    if (f.shim && f.scheme->id() != SchemeId::kCleanSlate) f.scheme->cap_cwnd(f.shim->cap());
  }

  void on_ack(Flow& f, const AckEvent& ack, std::int64_t now) {
    ++f.acked;
    f.last_progress_ms = now;
    f.srtt_ms = f.srtt_ms == 0.0 ? ack.rtt_ms : 0.875 * f.srtt_ms + 0.125 * ack.rtt_ms;
    f.scheme->on_ack(ack);
    if (f.shim) f.shim->on_ack(ack);
    if (record) {
      auto& fl = log.flows[static_cast<std::size_t>(f.id)];
      fl.acks.push_back({now, ack.rtt_ms, ack.delivered_bytes});
      fl.delivered_bytes += ack.delivered_bytes;
    }

    // Every ack above a missing sequence number counts as a duplicate for it.
    bool loss_signal = false;
    for (auto& d : f.undetected_drops) {
      if (d.seq >= ack.seq) break;
      ++d.dupacks;
    }
    while (!f.undetected_drops.empty() && f.undetected_drops.front().dupacks >= 3) {
      const auto d = f.undetected_drops.front();
      f.undetected_drops.pop_front();
      ++f.detected_lost;
      if (d.seq > f.recovery_seq) loss_signal = true;
    }
    if (loss_signal) {
      f.scheme->on_loss(now);
      f.recovery_seq = f.next_seq - 1;
      if (record) log.flows[static_cast<std::size_t>(f.id)].loss_times.push_back(now);
    }
    enforce_cap(f);
  }

  void check_rto(Flow& f, std::int64_t now) {
    if (f.sender_in_flight() <= 0) {
      f.last_progress_ms = now;
      return;
    }
    const double rto = std::max(2.0 * f.srtt_ms, 200.0);
    if (static_cast<double>(now - f.last_progress_ms) < rto) return;
    f.detected_lost += static_cast<std::int64_t>(f.undetected_drops.size());
    f.undetected_drops.clear();
    f.scheme->on_rto(now);
    enforce_cap(f);
    f.recovery_seq = f.next_seq - 1;
    f.last_progress_ms = now;
    if (record) log.flows[static_cast<std::size_t>(f.id)].loss_times.push_back(now);
  }

  void send(Flow& f, std::int64_t now) {
    const double window = f.window();
    bool sent_any = false;
    while (static_cast<double>(f.sender_in_flight()) < window) {
      Packet p{f.id, f.next_seq++, mtu, now, -1};
      ++sent;
      sent_any = true;
      if (record) ++log.flows[static_cast<std::size_t>(f.id)].sent;
      if (!queue_for(f.id).enqueue(p)) {
        ++dropped;
        f.undetected_drops.push_back({p.seq, 0});
        if (record) ++log.flows[static_cast<std::size_t>(f.id)].dropped;
      }
    }
    if (sent_any && record) {
      auto& fl = log.flows[static_cast<std::size_t>(f.id)];
      fl.max_cap_excess = std::max(fl.max_cap_excess, f.sender_in_flight() - window);
    }
  }

  void serve(int opportunities, std::int64_t now) {
    for (int k = 0; k < opportunities; ++k) {
      BottleneckQueue* q = nullptr;
      if (!cfg.per_flow_queues) {
        q = &queues[0];
        if (q->empty()) return;
      } else {
        for (std::size_t i = 0; i < queues.size(); ++i) {
          auto& cand = queues[(rr + i) % queues.size()];
          if (!cand.empty()) {
            q = &cand;
            rr = (rr + i + 1) % queues.size();
            break;
          }
        }
        if (q == nullptr) return;
      }
      Packet p = q->pop();
      ++in_flight;
      ++log.opportunities_consumed;
      downlink.push_back({p, now + down_ms});
    }
  }
};

World::World(const Trace& trace, const SimConfig& cfg, std::vector<FlowSetup> flows, bool record,
             std::int64_t trace_offset_ms)
    : impl_(std::make_unique<Impl>()) {
  if (trace.empty()) throw Error("cannot simulate an empty trace");
  cfg.validate(trace.mtu_bytes());
  if (flows.empty()) throw Error("at least one flow is required");
  auto& s = *impl_;
  s.trace = &trace;
  s.cfg = cfg;
  s.record = record;
  s.offset = trace_offset_ms;
  s.mtu = trace.mtu_bytes();
  s.down_ms = cfg.mrtt_ms / 2;
  s.up_ms = cfg.mrtt_ms - s.down_ms;
  s.log.mrtt_ms = cfg.mrtt_ms;
  s.log.mtu_bytes = s.mtu;
  for (std::size_t i = 0; i < flows.size(); ++i) {
    auto& setup = flows[i];
    if (setup.scheme == SchemeId::kCleanSlate && !setup.plugin)
      throw Error("clean_slate_drl requires an attached agent");
    Flow f;
    f.id = static_cast<int>(i);
    SchemeParams params = setup.scheme_params;
    params.mtu_bytes = s.mtu;
    f.scheme = make_scheme(setup.scheme, params);
    if (setup.plugin) f.shim = std::make_unique<DeepccShim>(*setup.plugin);
    f.start_ms = setup.start_ms;
    s.flows.push_back(std::move(f));
    s.log.flows.emplace_back();
    s.log.flows.back().start_ms = setup.start_ms;
  }
  const std::size_t nq = cfg.per_flow_queues ? flows.size() : 1;
  for (std::size_t i = 0; i < nq; ++i) s.queues.emplace_back(cfg.buffer_bytes);
}

World::~World() = default;
World::World(World&&) noexcept = default;
World& World::operator=(World&&) noexcept = default;

std::size_t World::flow_count() const { return impl_->flows.size(); }

DeepccShim* World::shim(std::size_t flow) { return impl_->flows.at(flow).shim.get(); }
CcScheme& World::scheme(std::size_t flow) { return *impl_->flows.at(flow).scheme; }
std::int64_t World::in_flight(std::size_t flow) const {
  return impl_->flows.at(flow).sender_in_flight();
}
double World::effective_cwnd(std::size_t flow) const { return impl_->flows.at(flow).window(); }

void World::tick() {
  auto& s = *impl_;
  const std::int64_t now = now_;

  for (auto& f : s.flows) {
    if (!f.started && now >= f.start_ms) {
      f.started = true;
      f.last_progress_ms = now;
      if (f.shim) f.shim->start(now);
    }
  }

  // Arrivals at receivers.
  while (!s.downlink.empty() && s.downlink.front().deliver_at <= now) {
    auto tr = s.downlink.front();
    s.downlink.pop_front();
    --s.in_flight;
    ++s.delivered;
    tr.pkt.delivered_at_ms = now;
    AckEvent ack;
    ack.flow_id = tr.pkt.flow_id;
    ack.seq = tr.pkt.seq;
    ack.time_ms = now + s.up_ms;
    ack.rtt_ms = static_cast<double>(ack.time_ms - tr.pkt.sent_at_ms);
    ack.delivered_bytes = tr.pkt.size_bytes;
    s.uplink.push_back({ack});
  }

  // Acks at senders.
  while (!s.uplink.empty() && s.uplink.front().ack.time_ms <= now) {
    const AckEvent ack = s.uplink.front().ack;
    s.uplink.pop_front();
    s.on_ack(s.flows[static_cast<std::size_t>(ack.flow_id)], ack, now);
  }

  for (auto& f : s.flows) {
    if (!f.started) continue;
    s.check_rto(f, now);
    s.send(f, now);
  }

  const int opportunities = s.trace->opportunities_at(now + s.offset);
  s.log.opportunities_offered += opportunities;
  s.serve(opportunities, now);

  const std::int64_t queued = s.queued_packets();
  if (s.sent != s.delivered + queued + s.in_flight + s.dropped) s.log.conservation_held = false;

  if (s.record) {
    TickRecord r;
    r.t = now;
    r.queue_bytes = s.queued_bytes();
    r.capacity_bytes = static_cast<std::int64_t>(opportunities) * s.mtu;
    r.sent = s.sent;
    r.delivered = s.delivered;
    r.queued = queued;
    r.in_flight = s.in_flight;
    r.dropped = s.dropped;
    s.log.ticks.push_back(r);
    for (std::size_t i = 0; i < s.flows.size(); ++i) {
      auto& f = s.flows[i];
      FlowTickRecord fr;
      fr.cwnd = f.scheme->cwnd();
      fr.cwnd_max = f.shim ? f.shim->cap() : kInf;
      fr.in_flight = f.sender_in_flight();
      s.log.flows[i].ticks.push_back(fr);
    }
  }
  ++now_;
  s.log.duration_ms = now_;
}

bool World::decision_due(std::size_t flow) const {
  const auto& f = impl_->flows.at(flow);
  return f.started && f.shim && f.shim->period_due(now_);
}

PeriodOutcome World::close_period(std::size_t flow) {
  auto& f = impl_->flows.at(flow);
  if (!f.shim) throw Error("flow has no plug-in");
  return f.shim->close_period(now_, f.scheme->cwnd());
}

void World::apply_alpha(std::size_t flow, double alpha) {
  auto& f = impl_->flows.at(flow);
  if (!f.shim) throw Error("flow has no plug-in");
  if (auto* cs = dynamic_cast<CleanSlate*>(f.scheme.get())) {
    cs->apply_alpha(alpha);
    return;
  }
  f.shim->set_action(alpha, f.scheme->cwnd());
  impl_->enforce_cap(f);
}

const EpisodeLog& World::log() const { return impl_->log; }
EpisodeLog World::take_log() { return std::move(impl_->log); }

EpisodeLog run_episode(const Trace& trace, const SimConfig& cfg, std::vector<FlowSetup> flows,
                       const std::vector<ActionPolicy*>& policies, std::int64_t trace_offset_ms) {
  for (std::size_t i = 0; i < flows.size(); ++i) {
    if (flows[i].plugin && (i >= policies.size() || policies[i] == nullptr))
      throw Error("flow " + std::to_string(i) + " has a plug-in but no policy");
  }
  World world(trace, cfg, std::move(flows), true, trace_offset_ms);
  while (world.now() < cfg.episode_ms) {
    world.tick();
    for (std::size_t i = 0; i < world.flow_count(); ++i) {
      if (!world.decision_due(i)) continue;
      world.close_period(i);
      world.apply_alpha(i, policies[i]->act(world.shim(i)->state()));
    }
  }
  return world.take_log();
}

EpisodeLog run_episode(SchemeId scheme, ActionPolicy* plugin, const Trace& trace,
                       const SimConfig& cfg, const ShimConfig& shim_cfg,
                       std::int64_t trace_offset_ms) {
  if (scheme == SchemeId::kCleanSlate && plugin == nullptr)
    throw Error("clean_slate_drl requires an attached agent");
  FlowSetup setup;
  setup.scheme = scheme;
  if (plugin != nullptr) setup.plugin = shim_cfg;
  return run_episode(trace, cfg, {setup}, {plugin}, trace_offset_ms);
}

// ---- serialization ----

void EpisodeLog::write_ack_csv(std::ostream& out) const {
  out << "t,flow,rtt,delivered_bytes\n";
  for (std::size_t f = 0; f < flows.size(); ++f)
    for (const auto& a : flows[f].acks)
      out << a.t << ',' << f << ',' << a.rtt_ms << ',' << a.delivered_bytes << '\n';
}

void EpisodeLog::write_tick_csv(std::ostream& out) const {
  out << "t,queue_bytes,capacity\n";
  for (const auto& r : ticks) out << r.t << ',' << r.queue_bytes << ',' << r.capacity_bytes << '\n';
}

namespace {

constexpr char kLogMagic[8] = {'D', 'C', 'C', 'L', 'O', 'G', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError("truncated binary log");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void EpisodeLog::write_binary(std::ostream& out) const {
  out.write(kLogMagic, sizeof(kLogMagic));
  put<std::int32_t>(out, mrtt_ms);
  put<std::int32_t>(out, mtu_bytes);
  put<std::int64_t>(out, duration_ms);
  put<std::uint8_t>(out, conservation_held ? 1 : 0);
  put<std::int64_t>(out, opportunities_consumed);
  put<std::int64_t>(out, opportunities_offered);
  put<std::uint64_t>(out, ticks.size());
  for (const auto& r : ticks) {
    put(out, r.t);
    put(out, r.queue_bytes);
    put(out, r.capacity_bytes);
    put(out, r.sent);
    put(out, r.delivered);
    put(out, r.queued);
    put(out, r.in_flight);
    put(out, r.dropped);
  }
  put<std::uint64_t>(out, flows.size());
  for (const auto& f : flows) {
    put(out, f.start_ms);
    put(out, f.sent);
    put(out, f.dropped);
    put(out, f.delivered_bytes);
    put(out, f.max_cap_excess);
    put<std::uint64_t>(out, f.acks.size());
    for (const auto& a : f.acks) {
      put(out, a.t);
      put(out, a.rtt_ms);
      put<std::int32_t>(out, a.delivered_bytes);
    }
    put<std::uint64_t>(out, f.loss_times.size());
    for (auto t : f.loss_times) put(out, t);
    put<std::uint64_t>(out, f.ticks.size());
    for (const auto& r : f.ticks) {
      put(out, r.cwnd);
      put(out, r.cwnd_max);
      put(out, r.in_flight);
    }
  }
}

EpisodeLog EpisodeLog::read_binary(std::istream& in) {
  char magic[sizeof(kLogMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kLogMagic, sizeof(magic)) != 0)
    throw ParseError("not an episode log");
  EpisodeLog log;
  log.mrtt_ms = get<std::int32_t>(in);
  log.mtu_bytes = get<std::int32_t>(in);
  log.duration_ms = get<std::int64_t>(in);
  log.conservation_held = get<std::uint8_t>(in) != 0;
  log.opportunities_consumed = get<std::int64_t>(in);
  log.opportunities_offered = get<std::int64_t>(in);
  log.ticks.resize(get<std::uint64_t>(in));
  for (auto& r : log.ticks) {
    r.t = get<std::int64_t>(in);
    r.queue_bytes = get<std::int64_t>(in);
    r.capacity_bytes = get<std::int64_t>(in);
    r.sent = get<std::int64_t>(in);
    r.delivered = get<std::int64_t>(in);
    r.queued = get<std::int64_t>(in);
    r.in_flight = get<std::int64_t>(in);
    r.dropped = get<std::int64_t>(in);
  }
  log.flows.resize(get<std::uint64_t>(in));
  for (auto& f : log.flows) {
    f.start_ms = get<std::int64_t>(in);
    f.sent = get<std::int64_t>(in);
    f.dropped = get<std::int64_t>(in);
    f.delivered_bytes = get<std::int64_t>(in);
    f.max_cap_excess = get<double>(in);
    f.acks.resize(get<std::uint64_t>(in));
    for (auto& a : f.acks) {
      a.t = get<std::int64_t>(in);
      a.rtt_ms = get<double>(in);
      a.delivered_bytes = get<std::int32_t>(in);
    }
    f.loss_times.resize(get<std::uint64_t>(in));
    for (auto& t : f.loss_times) t = get<std::int64_t>(in);
    f.ticks.resize(get<std::uint64_t>(in));
    for (auto& r : f.ticks) {
      r.cwnd = get<double>(in);
      r.cwnd_max = get<double>(in);
      r.in_flight = get<std::int64_t>(in);
    }
  }
  return log;
}

}  // namespace deepcc
