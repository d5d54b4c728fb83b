#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "deepcc/error.hpp"
#include "deepcc/metrics.hpp"

using namespace deepcc;

namespace {

EpisodeLog synthetic_log(const std::vector<double>& rtts, int mrtt = 20) {
  EpisodeLog log;
  log.mrtt_ms = mrtt;
  log.mtu_bytes = 1500;
  log.duration_ms = 1000;
  for (std::int64_t t = 0; t < 1000; ++t) log.ticks.push_back({t, 0, 1500});
  FlowLog f;
  for (std::size_t i = 0; i < rtts.size(); ++i)
    f.acks.push_back({static_cast<std::int64_t>(i), rtts[i], 1500});
  log.flows.push_back(f);
  return log;
}

}  // namespace

TEST_CASE("flow metrics arithmetic") {
  const auto m = flow_metrics(synthetic_log({30, 50, 70}));
  CHECK(m.avg_delay_ms == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(m.avg_queuing_delay_ms == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(m.p95_delay_ms == 70.0);
  CHECK(m.acks == 3);
  CHECK(m.throughput_bps == doctest::Approx(3 * 1500 * 8.0));
}

TEST_CASE("acks at mrtt have no queuing delay") {
  CHECK(flow_metrics(synthetic_log({20, 20, 20})).avg_queuing_delay_ms == 0.0);
}

TEST_CASE("delivering every opportunity is full utilization") {
  const auto m = flow_metrics(synthetic_log(std::vector<double>(1000, 25.0)));
  CHECK(m.utilization == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero acks is an error") {
  CHECK_THROWS_AS(flow_metrics(synthetic_log({})), Error);
  CHECK_THROWS_AS(flow_metrics(synthetic_log({20}), 3), Error);
}

TEST_CASE("nearest rank percentile") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(percentile_nearest_rank(v, 95.0) == 95.0);
  CHECK(percentile_nearest_rank(v, 100.0) == 100.0);
  CHECK(percentile_nearest_rank({7.0}, 95.0) == 7.0);
  CHECK(percentile_nearest_rank({1, 2, 3}, 50.0) == 2.0);
  CHECK_THROWS_AS(percentile_nearest_rank({}, 50.0), Error);
}

TEST_CASE("jain index examples") {
  const std::vector<double> equal{3.0, 3.0, 3.0, 3.0};
  CHECK(jain_index(equal) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<double> one_idle{5.0, 0.0};
  CHECK(jain_index(one_idle) == doctest::Approx(0.5).epsilon(1e-12));
  const std::vector<double> ramp{1.0, 2.0, 3.0};
  CHECK(jain_index(ramp) == doctest::Approx(36.0 / 42.0).epsilon(1e-12));
  const std::vector<double> zeros{0.0, 0.0};
  CHECK_THROWS_AS(jain_index(zeros), Error);
  CHECK_THROWS_AS(jain_index(std::vector<double>{}), Error);
  const std::vector<double> negative{1.0, -1.0};
  CHECK_THROWS_AS(jain_index(negative), Error);
}

TEST_CASE("jain index bounds and invariances") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1e7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<double> r(n);
    for (auto& x : r) x = (rng() % 5 == 0) ? 0.0 : u(rng);
    if (std::all_of(r.begin(), r.end(), [](double x) { return x == 0.0; })) r[0] = 1.0;
    const double j = jain_index(r);
    CHECK(j >= 1.0 / n - 1e-12);
    CHECK(j <= 1.0 + 1e-12);
    auto shuffled = r;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(jain_index(shuffled) == doctest::Approx(j).epsilon(1e-12));
    auto scaled = r;
    for (auto& x : scaled) x *= 3.7;
    CHECK(jain_index(scaled) == doctest::Approx(j).epsilon(1e-12));
  }
}

TEST_CASE("sweep axes parse") {
  CHECK(parse_sweep_axis("buffer") == SweepAxis::kBufferBytes);
  CHECK(parse_sweep_axis("mrtt") == SweepAxis::kMrttMs);
  CHECK(parse_sweep_axis("target") == SweepAxis::kTargetMs);
  CHECK_THROWS_AS(parse_sweep_axis("loss"), Error);
}

TEST_CASE("raw buffer sweep delay grows with the buffer") {
  SimConfig cfg;
  cfg.episode_ms = 30000;
  const Trace tr = constant_trace(30000, 1);
  for (auto id : {SchemeId::kAimd, SchemeId::kCubic}) {
    const auto rows = sweep(SweepAxis::kBufferBytes, {30000, 75000, 150000, 300000, 1000000}, id,
                            nullptr, tr, cfg);
    REQUIRE(rows.size() == 5);
    for (std::size_t i = 1; i < rows.size(); ++i)
      CHECK(rows[i].metrics.avg_delay_ms >= rows[i - 1].metrics.avg_delay_ms);
    for (const auto& r : rows) {
      CHECK(r.mode == "raw");
      CHECK(r.metrics.utilization <= 1.02);
      CHECK(r.metrics.avg_queuing_delay_ms >= 0.0);
    }
  }
}

TEST_CASE("plugin sweep adds one row per value") {
  SimConfig cfg;
  cfg.episode_ms = 5000;
  ConstantPolicy p(0.1);
  const auto rows = sweep(SweepAxis::kTargetMs, {25, 50, 100}, SchemeId::kCubic, &p,
                          constant_trace(5000, 1), cfg);
  REQUIRE(rows.size() == 6);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return r.mode == "deepcc"; }) == 3);
  for (const auto& r : rows) CHECK(r.metrics.avg_delay_ms > 0.0);
  std::ostringstream csv;
  write_sweep_csv(csv, SweepAxis::kTargetMs, rows);
  const std::string text = csv.str();
  CHECK(text.rfind("target_ms,mode," + metrics_csv_header() + "\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  CHECK_THROWS_AS(sweep(SweepAxis::kTargetMs, {}, SchemeId::kCubic, &p, constant_trace(5000, 1), cfg),
                  Error);
}

TEST_CASE("single value sweep equals one episode") {
  SimConfig cfg;
  cfg.episode_ms = 5000;
  const Trace tr = constant_trace(5000, 1);
  const auto rows = sweep(SweepAxis::kMrttMs, {30}, SchemeId::kIllinois, nullptr, tr, cfg);
  cfg.mrtt_ms = 30;
  const auto m = flow_metrics(run_episode(SchemeId::kIllinois, nullptr, tr, cfg));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].metrics.avg_delay_ms == m.avg_delay_ms);
  CHECK(rows[0].metrics.utilization == m.utilization);
}

TEST_CASE("metrics are a pure function of the log") {
  SimConfig cfg;
  cfg.episode_ms = 5000;
  const auto log = run_episode(SchemeId::kCubic, nullptr, constant_trace(5000, 1), cfg);
  CHECK(metrics_csv_fields(flow_metrics(log)) == metrics_csv_fields(flow_metrics(log)));
  const std::string header = metrics_csv_header();
  CHECK(std::count(header.begin(), header.end(), ',') == 4);
}

TEST_CASE("late starters are measured from their start") {
  SimConfig cfg;
  cfg.per_flow_queues = false;
  cfg.episode_ms = 20000;
  FlowSetup a{SchemeId::kCubic}, b{SchemeId::kCubic};
  b.start_ms = 10000;
  const auto log = run_episode(constant_trace(20000, 2), cfg, {a, b}, {});
  const auto mb = flow_metrics(log, 1);
  CHECK(mb.throughput_bps > 0.0);
  CHECK(mb.utilization <= 1.02);
  const auto agg = aggregate_metrics(log);
  CHECK(agg.utilization > 0.9);
  CHECK(agg.utilization <= 1.02);
}
