#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "deepcc/error.hpp"
#include "deepcc/metrics.hpp"
#include "deepcc/sim.hpp"

using namespace deepcc;

namespace {

double mean_cwnd(const FlowLog& f) {
  double sum = 0.0;
  for (const auto& r : f.ticks) sum += std::min(r.cwnd, r.cwnd_max);
  return sum / static_cast<double>(f.ticks.size());
}

double mean_in_flight(const FlowLog& f) {
  double sum = 0.0;
  for (const auto& r : f.ticks) sum += static_cast<double>(r.in_flight);
  return sum / static_cast<double>(f.ticks.size());
}

Trace random_trace(std::uint64_t seed, std::int64_t ms) {
  SynthTraceConfig cfg;
  cfg.duration_s = static_cast<double>(ms) / 1000.0;
  cfg.seed = seed;
  cfg.dwell_ms = 300.0;
  return generate_synthetic_trace(cfg);
}

}  // namespace

TEST_CASE("enqueue budget is inclusive") {
  BottleneckQueue q(150000);
  Packet p;
  p.size_bytes = 1500;
  CHECK(q.enqueue(p));
  BottleneckQueue almost(150000);
  Packet big;
  big.size_bytes = 149000;
  REQUIRE(almost.enqueue(big));
  CHECK_FALSE(almost.enqueue(p));
  BottleneckQueue exact(150500);
  REQUIRE(exact.enqueue(big));
  CHECK(exact.enqueue(p));
  CHECK(exact.bytes() == 150500);
  CHECK(exact.pop().size_bytes == 149000);
  CHECK(exact.bytes() == 1500);
}

TEST_CASE("config validation") {
  SimConfig cfg;
  CHECK_NOTHROW(cfg.validate(1500));
  cfg.buffer_bytes = 1000;
  CHECK_THROWS_AS(cfg.validate(1500), Error);
  cfg = {};
  cfg.mrtt_ms = 0;
  CHECK_THROWS_AS(cfg.validate(1500), Error);
}

TEST_CASE("empty trace is rejected at run time") {
  CHECK_THROWS_AS(run_episode(SchemeId::kAimd, nullptr, Trace{}, SimConfig{}), Error);
}

TEST_CASE("clean slate needs an agent") {
  CHECK_THROWS_AS(run_episode(SchemeId::kCleanSlate, nullptr, constant_trace(1000, 1), SimConfig{}),
                  Error);
}

TEST_CASE("unloaded link rtt equals mrtt") {
  SimConfig cfg;
  cfg.episode_ms = 2000;
  FlowSetup f{SchemeId::kAimd};
  f.scheme_params.initial_cwnd = 1.0;
  ConstantPolicy hold(-1.0);  // cap pins the window at one packet
  f.plugin = ShimConfig{};
  const auto log = run_episode(constant_trace(2000, 1), cfg, {f}, {&hold});
  REQUIRE(!log.flows[0].acks.empty());
  for (const auto& a : log.flows[0].acks) CHECK(a.rtt_ms == 20.0);
}

TEST_CASE("queueing delay follows the standing queue") {
  SimConfig cfg;
  cfg.episode_ms = 20000;
  const auto log = run_episode(SchemeId::kAimd, nullptr, constant_trace(20000, 1), cfg);
  // Link rate 1 packet/ms: a packet that finds Q bytes queued waits Q/1500 ms.
  int checked = 0;
  for (const auto& a : log.flows[0].acks) {
    const auto sent = a.t - static_cast<std::int64_t>(a.rtt_ms);
    if (sent < 3000) continue;
    const double expect = 20.0 + log.ticks[static_cast<std::size_t>(sent - 1)].queue_bytes / 1500.0;
    CHECK(std::abs(a.rtt_ms - expect) <= 2.0);
    ++checked;
  }
  CHECK(checked > 10000);
}

TEST_CASE("no opportunity means the queue cannot shrink") {
  std::vector<std::int64_t> ts;
  for (std::int64_t t = 0; t < 5000; ++t)
    if ((t / 50) % 2 == 0) ts.push_back(t);
  SimConfig cfg;
  cfg.episode_ms = 5000;
  const auto log = run_episode(SchemeId::kCubic, nullptr, Trace(ts), cfg);
  int idle = 0;
  for (std::size_t t = 1; t < log.ticks.size(); ++t) {
    if (log.ticks[t].capacity_bytes != 0) continue;
    CHECK(log.ticks[t].queue_bytes >= log.ticks[t - 1].queue_bytes);
    ++idle;
  }
  CHECK(idle > 2000);
}

TEST_CASE("raw aimd fills the buffer on a constant link") {
  SimConfig cfg;
  const auto log = run_episode(SchemeId::kAimd, nullptr, constant_trace(60000, 1), cfg);
  const auto m = flow_metrics(log);
  CHECK(m.utilization > 0.9);
  CHECK(m.avg_queuing_delay_ms > 50.0);
  CHECK(m.p95_delay_ms <= 20.0 + 100.0 + 2.0);
  CHECK(!log.flows[0].loss_times.empty());
}

TEST_CASE("episodes are deterministic") {
  const Trace tr = random_trace(3, 20000);
  SimConfig cfg;
  cfg.episode_ms = 20000;
  ConstantPolicy p(0.2);
  for (auto id : {SchemeId::kAimd, SchemeId::kCubic, SchemeId::kWestwood, SchemeId::kIllinois}) {
    CHECK(run_episode(id, nullptr, tr, cfg) == run_episode(id, nullptr, tr, cfg));
    CHECK(run_episode(id, &p, tr, cfg) == run_episode(id, &p, tr, cfg));
  }
}

TEST_CASE("forcing alpha -1 shrinks the average window") {
  const Trace tr = random_trace(5, 30000);
  SimConfig cfg;
  cfg.episode_ms = 30000;
  ConstantPolicy down(-1.0);
  for (auto id : {SchemeId::kAimd, SchemeId::kCubic, SchemeId::kWestwood, SchemeId::kIllinois}) {
    const auto raw = run_episode(id, nullptr, tr, cfg);
    const auto capped = run_episode(id, &down, tr, cfg);
    CHECK(mean_cwnd(capped.flows[0]) < mean_cwnd(raw.flows[0]));
  }
}

TEST_CASE("invariants over random episodes") {
  std::mt19937_64 rng(17);
  const SchemeId schemes[] = {SchemeId::kAimd, SchemeId::kCubic, SchemeId::kWestwood,
                              SchemeId::kIllinois};
  for (int i = 0; i < 8; ++i) {
    const Trace tr = random_trace(rng(), 10000);
    SimConfig cfg;
    cfg.episode_ms = 10000;
    cfg.mrtt_ms = 4 + 2 * static_cast<int>(rng() % 14);
    cfg.buffer_bytes = 30000 + static_cast<std::int64_t>(rng() % 300000);
    cfg.per_flow_queues = rng() % 2;
    const std::size_t nflows = 1 + rng() % 3;
    std::vector<FlowSetup> flows;
    std::vector<std::unique_ptr<ConstantPolicy>> owned;
    std::vector<ActionPolicy*> policies;
    for (std::size_t k = 0; k < nflows; ++k) {
      FlowSetup f{schemes[rng() % 4]};
      f.start_ms = static_cast<std::int64_t>(k * 1000);
      if (rng() % 2) {
        f.plugin = ShimConfig{};
        owned.push_back(std::make_unique<ConstantPolicy>(
            std::uniform_real_distribution<double>(-1.0, 1.0)(rng)));
        policies.push_back(owned.back().get());
      } else {
        policies.push_back(nullptr);
      }
      flows.push_back(f);
    }
    const auto log = run_episode(tr, cfg, flows, policies);
    CAPTURE(i);
    CHECK(log.conservation_held);
    for (const auto& r : log.ticks) CHECK(r.sent == r.delivered + r.queued + r.in_flight + r.dropped);
    std::int64_t delivered_bytes = 0;
    for (const auto& f : log.flows) {
      for (const auto& a : f.acks) CHECK(a.rtt_ms >= cfg.mrtt_ms);
      delivered_bytes += f.delivered_bytes;
      CHECK(f.max_cap_excess <= 1.0);
    }
    CHECK(delivered_bytes <= log.opportunities_consumed * log.mtu_bytes);
    CHECK(log.opportunities_consumed <= log.opportunities_offered);
  }
}

TEST_CASE("shared queue splits a link between flows") {
  SimConfig cfg;
  cfg.per_flow_queues = false;
  cfg.episode_ms = 30000;
  const auto log = run_episode(constant_trace(30000, 2), cfg,
                               {FlowSetup{SchemeId::kAimd}, FlowSetup{SchemeId::kAimd}}, {});
  CHECK(log.flows[0].delivered_bytes > 0);
  CHECK(log.flows[1].delivered_bytes > 0);
  CHECK(aggregate_metrics(log).utilization > 0.9);
}

TEST_CASE("underlying scheme keeps changing cwnd inside a period") {
  SimConfig cfg;
  cfg.episode_ms = 5000;
  ConstantPolicy up(1.0);
  const auto log = run_episode(SchemeId::kCubic, &up, constant_trace(5000, 1), cfg);
  int changes_without_new_cap = 0;
  const auto& ticks = log.flows[0].ticks;
  for (std::size_t t = 1; t < ticks.size(); ++t)
    if (ticks[t].cwnd_max == ticks[t - 1].cwnd_max && ticks[t].cwnd != ticks[t - 1].cwnd)
      ++changes_without_new_cap;
  CHECK(changes_without_new_cap > 100);
}

TEST_CASE("trace offset shifts the replayed capacity") {
  std::vector<std::int64_t> ts;
  for (std::int64_t t = 500; t < 1000; ++t) ts.push_back(t);
  SimConfig cfg;
  cfg.episode_ms = 400;
  const auto a = run_episode(SchemeId::kAimd, nullptr, Trace(ts), cfg, {}, 0);
  const auto b = run_episode(SchemeId::kAimd, nullptr, Trace(ts), cfg, {}, 500);
  CHECK(a.opportunities_offered == 0);
  CHECK(b.opportunities_offered == 400);
}

TEST_CASE("log serialization round trip") {
  SimConfig cfg;
  cfg.episode_ms = 3000;
  ConstantPolicy p(0.5);
  const auto log = run_episode(SchemeId::kCubic, &p, random_trace(2, 3000), cfg);
  std::stringstream bin;
  log.write_binary(bin);
  CHECK(EpisodeLog::read_binary(bin) == log);
  std::stringstream bad("garbage");
  CHECK_THROWS_AS(EpisodeLog::read_binary(bad), Error);
  const std::string blob = bin.str();
  for (std::size_t cut : {std::size_t{8}, std::size_t{20}, blob.size() / 2, blob.size() - 1}) {
    std::stringstream truncated(blob.substr(0, cut));
    CHECK_THROWS_AS(EpisodeLog::read_binary(truncated), Error);
  }

  std::ostringstream acks, ticks;
  log.write_ack_csv(acks);
  log.write_tick_csv(ticks);
  CHECK(acks.str().rfind("t,flow,rtt,delivered_bytes\n", 0) == 0);
  CHECK(ticks.str().rfind("t,queue_bytes,capacity\n", 0) == 0);
  const std::string tick_text = ticks.str();
  CHECK(std::count(tick_text.begin(), tick_text.end(), '\n') == 3001);
}
