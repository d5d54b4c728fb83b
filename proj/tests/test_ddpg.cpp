#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "deepcc/ddpg.hpp"
#include "deepcc/error.hpp"
#include "deepcc/metrics.hpp"
#include "gradcheck.hpp"

using namespace deepcc;

namespace {

AgentConfig tiny_config(bool batchnorm = true) {
  AgentConfig cfg;
  cfg.shim.history = 2;
  cfg.hidden = {8, 6};
  cfg.actor_batchnorm = batchnorm;
  cfg.buffer_capacity = 5000;
  return cfg;
}

Batch random_batch(std::size_t dim, Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> a(-1.0, 1.0);
  Batch b;
  b.states.resize(static_cast<Eigen::Index>(dim), n);
  b.next_states.resize(static_cast<Eigen::Index>(dim), n);
  b.actions.resize(1, n);
  b.rewards.resize(n);
  for (Eigen::Index i = 0; i < b.states.size(); ++i) {
    b.states.data()[i] = g(rng);
    b.next_states.data()[i] = g(rng);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    b.actions(0, i) = a(rng);
    b.rewards(i) = g(rng);
  }
  return b;
}

void fill(nn::DenseNet& net, double v) {
  net.for_each_tensor([v](std::span<double> p) {
    for (double& x : p) x = v;
  });
}

// Scales every parameter so small random nets have O(1) outputs.
void randomize(nn::DenseNet& net, Rng& rng, double scale = 0.8) {
  std::normal_distribution<double> g(0.0, scale);
  net.for_each_tensor([&](std::span<double> p) {
    for (double& x : p) x = g(rng);
  });
  for (auto& l : net.layers())
    if (l.bn) l.bn->gamma.array() = l.bn->gamma.array().abs() + 0.5;
}

TrainConfig short_train(std::int64_t steps) {
  TrainConfig tc;
  tc.total_steps = steps;
  tc.batch_size = 16;
  tc.warmup_steps = 64;
  tc.cold_start_steps = 50;
  tc.eval_every_steps = 100;
  tc.seed = 3;
  return tc;
}

EnvConfig short_env() {
  EnvConfig env;
  env.sim.episode_ms = 2000;
  env.scheme = SchemeId::kAimd;
  env.shim.history = 2;
  return env;
}

}  // namespace

TEST_CASE("greedy action is the bounded actor output") {
  DdpgAgent agent(tiny_config(), 1);
  Rng rng(1);
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const double mu = agent.policy(s);
  CHECK(std::abs(mu) <= 1.0);
  CHECK(agent.act(s, 0.0, rng) == mu);
  const nn::Matrix x = Eigen::Map<const nn::Matrix>(s.data(), 10, 1);
  CHECK(agent.actor().infer(x)(0, 0) == mu);
}

TEST_CASE("noisy actions are clamped") {
  CHECK(explore_action(0.95, 0.2) == 1.0);
  CHECK(explore_action(-0.9, -0.5) == -1.0);
  CHECK(explore_action(0.1, 0.2) == doctest::Approx(0.3));
  DdpgAgent agent(tiny_config(), 2);
  Rng rng(2);
  const std::vector<double> s(10, 0.3);
  for (int i = 0; i < 1000; ++i) {
    const double a = agent.act(s, 2.0, rng);
    CHECK(a >= -1.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("wrong state width is rejected") {
  DdpgAgent agent(tiny_config(), 1);
  CHECK_THROWS_AS(agent.policy(std::vector<double>(9, 0.0)), ShapeError);
}

TEST_CASE("cold start walk is a -1 to +1 to -1 staircase") {
  const std::int64_t total = 1700;
  CHECK(cold_start_alpha(0, total) == -1.0);
  CHECK(cold_start_alpha(800, total) == 1.0);
  CHECK(cold_start_alpha(total - 1, total) == -1.0);
  std::set<double> levels;
  double prev = -1.0;
  for (std::int64_t s = 0; s < total; ++s) {
    const double a = cold_start_alpha(s, total);
    levels.insert(a);
    CHECK(std::abs(a - prev) <= 0.25 + 1e-12);
    prev = a;
  }
  CHECK(levels.size() == 9);
}

TEST_CASE("cold start actions ignore the actor") {
  // Agents with different weights but the same training seed see identical
  // rewards while the walk is in charge.
  TrainConfig tc = short_train(60);
  tc.cold_start_steps = 60;
  tc.warmup_steps = 100;
  tc.eval_every_steps = 60;
  const Trace trace = constant_trace(4000, 1);
  std::vector<double> mean_rewards;
  for (std::uint64_t seed : {1u, 2u}) {
    DdpgAgent agent(tiny_config(), seed);
    const auto curve = train(agent, random_offset_env_factory(trace, short_env()), tc).curve;
    REQUIRE(curve.size() == 1);
    mean_rewards.push_back(curve[0].mean_reward);
  }
  CHECK(DdpgAgent(tiny_config(), 1).actor() != DdpgAgent(tiny_config(), 2).actor());
  CHECK(mean_rewards[0] == mean_rewards[1]);
}

TEST_CASE("replay buffer evicts oldest first") {
  ReplayBuffer buf(2);
  for (int i = 0; i < 3; ++i) buf.store({{double(i)}, 0.1 * i, double(i), {double(i + 1)}});
  CHECK(buf.size() == 2);
  CHECK(buf.at(0).state[0] == 1.0);
  CHECK(buf.at(1).state[0] == 2.0);
  ReplayBuffer partial(10);
  for (int i = 0; i < 4; ++i) partial.store({{double(i)}, 0.0, 0.0, {0.0}});
  CHECK(partial.size() == 4);
  const Transition t{{0.1, 1e-300, -3.5}, -0.7, 12.25, {4.0, 5.0, 6.0}};
  ReplayBuffer one(3);
  one.store(t);
  CHECK(one.at(0).state == t.state);
  CHECK(one.at(0).action == t.action);
  CHECK(one.at(0).reward == t.reward);
  CHECK(one.at(0).next_state == t.next_state);
  Rng rng(1);
  const auto sample = buf.sample(16, rng);
  CHECK(sample.size() == 16);
  const Batch b = Batch::from(sample);
  CHECK(b.size() == 16);
  CHECK(b.states.rows() == 1);
}

TEST_CASE("critic target examples") {
  Rng rng(3);
  AgentConfig cfg = tiny_config();
  cfg.gamma = 0.0;
  DdpgAgent zero_gamma(cfg, 1);
  const Batch b = random_batch(cfg.state_dim(), 8, rng);
  CHECK(zero_gamma.critic_targets(b).isApprox(b.rewards));

  cfg.gamma = 0.99;
  DdpgAgent agent(cfg, 1);
  auto& last = agent.target_critic().layers().back();
  last.w.setZero();
  last.b.setConstant(10.0);
  Batch one = random_batch(cfg.state_dim(), 1, rng);
  one.rewards(0) = 1.0;
  CHECK(agent.critic_targets(one)(0) == doctest::Approx(10.9).epsilon(1e-12));

  fill(agent.target_critic(), 0.0);
  fill(agent.target_actor(), 0.0);
  CHECK(agent.critic_targets(b) == b.rewards);
}

TEST_CASE("critic loss equals an independent recomputation") {
  Rng rng(4);
  DdpgAgent agent(tiny_config(), 4);
  randomize(agent.critic(), rng);
  randomize(agent.target_critic(), rng);
  const Batch b = random_batch(agent.config().state_dim(), 12, rng);
  const nn::Vector y = agent.critic_targets(b);
  const nn::Matrix q = agent.critic().infer(DdpgAgent::critic_input(b.states, b.actions));
  double expect = 0.0;
  for (Eigen::Index i = 0; i < 12; ++i) expect += (y(i) - q(0, i)) * (y(i) - q(0, i));
  expect /= 12.0;
  CHECK(agent.update_critic(b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("critic already at its targets stays put") {
  Rng rng(5);
  DdpgAgent agent(tiny_config(), 5);
  fill(agent.critic(), 0.0);
  fill(agent.target_critic(), 0.0);
  Batch b = random_batch(agent.config().state_dim(), 8, rng);
  b.rewards.setZero();
  const nn::DenseNet before = agent.critic();
  CHECK(agent.update_critic(b) == 0.0);
  CHECK(agent.critic() == before);
}

TEST_CASE("repeated critic updates on a fixed batch reduce the loss") {
  Rng rng(6);
  DdpgAgent agent(tiny_config(), 6);
  const Batch b = random_batch(agent.config().state_dim(), 32, rng);
  std::vector<double> losses;
  for (int i = 0; i <= 100; ++i) losses.push_back(agent.update_critic(b));
  CHECK(losses.back() < losses.front());
  for (std::size_t i = 10; i < losses.size(); i += 10) CHECK(losses[i] <= losses[i - 10]);
}

TEST_CASE("critic loss gradient matches finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    DdpgAgent agent(tiny_config(), 100 + trial);
    randomize(agent.critic(), rng);
    randomize(agent.target_critic(), rng);
    const Batch b = random_batch(agent.config().state_dim(), 8, rng);
    const auto tape = agent.critic_loss_gradient(b);
    const nn::Vector y = agent.critic_targets(b);
    const nn::Matrix x = DdpgAgent::critic_input(b.states, b.actions);
    auto loss = [&] {
      const nn::Matrix q = agent.critic().forward(x, nn::Mode::kTrain);
      return (q.row(0).transpose() - y).squaredNorm() / 8.0;
    };
    CAPTURE(trial);
    CHECK(testing::gradient_error(agent.critic(), tape, loss) < 1e-4);
  }
}

TEST_CASE("actor objective gradient matches finite differences") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    DdpgAgent agent(tiny_config(trial % 2 == 0), 200 + trial);
    randomize(agent.actor(), rng, 0.5);
    randomize(agent.critic(), rng);
    const Batch b = random_batch(agent.config().state_dim(), 8, rng);
    const auto tape = agent.actor_objective_gradient(b);
    auto objective = [&] {
      const nn::Matrix a = agent.actor().forward(b.states, nn::Mode::kTrain);
      return agent.critic().infer(DdpgAgent::critic_input(b.states, a)).mean();
    };
    CAPTURE(trial);
    CHECK(testing::gradient_error(agent.actor(), tape, objective) < 1e-3);
  }
}

TEST_CASE("actor update leaves the critic untouched and climbs Q") {
  Rng rng(9);
  AgentConfig cfg = tiny_config();
  cfg.actor_lr = 1e-3;
  DdpgAgent agent(cfg, 9);
  randomize(agent.critic(), rng);
  const Batch b = random_batch(cfg.state_dim(), 32, rng);
  const nn::DenseNet critic = agent.critic();
  std::vector<double> q;
  for (int i = 0; i < 200; ++i) q.push_back(agent.update_actor(b));
  CHECK(agent.critic() == critic);
  for (std::size_t start = 0; start + 50 <= q.size(); start += 50)
    CHECK(q[start + 49] >= q[start] - 1e-9);
  CHECK(q.back() > q.front());
}

TEST_CASE("target update uses tau") {
  AgentConfig cfg = tiny_config();
  cfg.tau = 0.5;
  DdpgAgent agent(cfg, 10);
  fill(agent.actor(), 2.0);
  fill(agent.target_actor(), 0.0);
  agent.update_targets();
  agent.target_actor().for_each_tensor([](std::span<const double> p) {
    for (double v : p) CHECK(v == 1.0);
  });
}

TEST_CASE("zero-step training returns the initial agent") {
  DdpgAgent agent(tiny_config(), 11);
  std::stringstream before;
  agent.save(before);
  const Trace trace = constant_trace(4000, 1);
  const auto res = train(agent, random_offset_env_factory(trace, short_env()), short_train(0));
  CHECK(res.curve.empty());
  std::stringstream after;
  agent.save(after);
  CHECK(before.str() == after.str());
}

TEST_CASE("training is reproducible for a fixed seed") {
  const Trace trace = constant_trace(4000, 1);
  std::string curves[2], weights[2];
  for (int run = 0; run < 2; ++run) {
    DdpgAgent agent(tiny_config(), 12);
    Evaluator eval = [&](const DdpgAgent& a) {
      AgentPolicy p(a);
      SimConfig cfg;
      cfg.episode_ms = 2000;
      const auto m = flow_metrics(run_episode(SchemeId::kAimd, &p, trace, cfg, a.config().shim));
      return EvalPoint{m.avg_delay_ms, m.utilization};
    };
    const auto res = train(agent, random_offset_env_factory(trace, short_env()), short_train(300), eval);
    CHECK(res.curve.size() == 3);
    std::ostringstream c, w;
    write_curve_csv(c, res.curve);
    agent.save(w);
    curves[run] = c.str();
    weights[run] = w.str();
  }
  CHECK(curves[0] == curves[1]);
  CHECK(weights[0] == weights[1]);
  CHECK(curves[0].rfind("step,avg_delay_ms,utilization,mean_reward\n", 0) == 0);
}

TEST_CASE("training resumes from the saved step") {
  const Trace trace = constant_trace(4000, 1);
  DdpgAgent agent(tiny_config(), 13);
  train(agent, random_offset_env_factory(trace, short_env()), short_train(200));
  std::stringstream ckpt;
  agent.save(ckpt);
  DdpgAgent resumed = DdpgAgent::load(ckpt);
  CHECK(resumed.progress().step == 200);
  CHECK(resumed.progress().sigma == agent.progress().sigma);
  const auto res = train(resumed, random_offset_env_factory(trace, short_env()), short_train(400));
  CHECK(resumed.progress().step == 400);
  REQUIRE(res.curve.size() == 2);
  CHECK(res.curve[0].step == 300);
}

TEST_CASE("agent checkpoint round trip is bit exact") {
  const Trace trace = constant_trace(4000, 1);
  DdpgAgent agent(tiny_config(), 14);
  train(agent, random_offset_env_factory(trace, short_env()), short_train(150));
  std::stringstream s1;
  agent.save(s1);
  const std::string blob = s1.str();
  DdpgAgent back = DdpgAgent::load(s1);
  std::stringstream s2;
  back.save(s2);
  CHECK(s2.str() == blob);
  CHECK(back.actor() == agent.actor());
  CHECK(back.target_critic() == agent.target_critic());
  CHECK(back.config().shim.history == 2);
  CHECK(back.config().shim.target_ms == agent.config().shim.target_ms);
  // Both continue identically from here.
  Rng r1(5), r2(5);
  const Batch b = random_batch(back.config().state_dim(), 16, r1);
  CHECK(back.update_critic(b) == agent.update_critic(b));
  CHECK(back.critic() == agent.critic());
  (void)r2;

  std::stringstream bad("not a checkpoint at all");
  CHECK_THROWS_AS(DdpgAgent::load(bad), ParseError);
  std::stringstream cut(blob.substr(0, blob.size() - 7));
  CHECK_THROWS_AS(DdpgAgent::load(cut), ParseError);
}

TEST_CASE("exploding rewards trip the divergence guard") {
  const Trace trace = constant_trace(4000, 1);
  EnvConfig env = short_env();
  env.shim.norms.p_scale = 1e-9;  // rewards around 1e15
  AgentConfig cfg = tiny_config();
  cfg.shim = env.shim;
  DdpgAgent agent(cfg, 15);
  TrainConfig tc = short_train(3000);
  CHECK_THROWS_AS(train(agent, random_offset_env_factory(trace, env), tc), DivergenceError);
}

TEST_CASE("environment steps are monitoring periods") {
  const Trace trace = constant_trace(4000, 1);
  CcEnv env(trace, short_env());
  const auto s0 = env.reset();
  CHECK(s0.size() == 10);
  int steps = 0;
  while (!env.done()) {
    const auto st = env.step(0.5);
    CHECK(st.state.size() == 10);
    ++steps;
  }
  CHECK(steps > 2000 / 200);  // periods are at most a few rtts long
  CHECK(steps <= 2000 / 10);
}

TEST_CASE("warmup shorter than a batch is rejected") {
  const Trace trace = constant_trace(4000, 1);
  DdpgAgent agent(tiny_config(), 16);
  TrainConfig tc = short_train(10);
  tc.warmup_steps = 4;
  CHECK_THROWS_AS(train(agent, random_offset_env_factory(trace, short_env()), tc), Error);
}

TEST_CASE("toy constant link training reaches the target" * doctest::skip()) {
  // Long-running; registered separately under its own test name.
  const Trace trace = constant_trace(60000, 1);
  EnvConfig env;
  env.sim.episode_ms = 30000;
  env.scheme = SchemeId::kAimd;
  AgentConfig cfg;
  DdpgAgent agent(cfg, 1);
  TrainConfig tc;
  tc.total_steps = 50000;
  train(agent, random_offset_env_factory(trace, env), tc);
  AgentPolicy p(agent);
  SimConfig sim;
  sim.episode_ms = 60000;
  const auto m = flow_metrics(run_episode(SchemeId::kAimd, &p, trace, sim, cfg.shim));
  MESSAGE("avg delay " << m.avg_delay_ms << " ms, utilization " << m.utilization);
  CHECK(m.avg_delay_ms <= 50.0);
  CHECK(m.utilization >= 0.6);
}
