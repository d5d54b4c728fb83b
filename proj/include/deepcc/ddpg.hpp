#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepcc/cc.hpp"
#include "deepcc/nn.hpp"
#include "deepcc/rng.hpp"
#include "deepcc/shim.hpp"
#include "deepcc/sim.hpp"
#include "deepcc/trace.hpp"

namespace deepcc {

struct Transition {
  std::vector<double> state;
  double action = 0.0;
  double reward = 0.0;
  std::vector<double> next_state;
};

// FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void store(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // i-th oldest transition currently held.
  const Transition& at(std::size_t i) const;
  // Uniform sample with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // oldest entry once full
  std::vector<Transition> items_;
};

// Column-stacked minibatch.
struct Batch {
  nn::Matrix states;       // state_dim x N
  nn::Matrix actions;      // 1 x N
  nn::Vector rewards;      // N
  nn::Matrix next_states;  // state_dim x N

  static Batch from(const std::vector<const Transition*>& items);
  Eigen::Index size() const { return rewards.size(); }
};

struct AgentConfig {
  // Plug-in settings the agent is trained for; the state width is 5 * history.
  ShimConfig shim{};
  std::vector<Eigen::Index> hidden{128, 128};
  bool actor_batchnorm = true;
  double gamma = 0.99;
  double tau = 0.001;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t buffer_capacity = 100000;

  std::size_t state_dim() const { return kFeatureCount * shim.history; }
};

struct TrainConfig {
  std::int64_t total_steps = 50000;
  std::size_t batch_size = 64;
  std::int64_t warmup_steps = 1000;
  double noise_sigma = 0.2;
  double noise_decay = 0.9995;
  double noise_min = 0.05;
  std::int64_t cold_start_steps = 1000;
  std::int64_t eval_every_steps = 5000;
  std::uint64_t seed = 1;
};

// Position of a training run; persisted with the agent so training resumes.
struct TrainProgress {
  std::int64_t step = 0;
  double sigma = -1.0;  // < 0: not started, use TrainConfig::noise_sigma
};

// Cold-start schedule: a staircase -1 -> +1 -> -1 spread over `total` steps.
double cold_start_alpha(std::int64_t step, std::int64_t total);

// Actor output plus exploration noise, clamped to [-1, 1].
double explore_action(double mu, double noise);

class DdpgAgent {
 public:
  DdpgAgent(const AgentConfig& cfg, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }

  // Deterministic policy output in [-1, 1].
  double policy(std::span<const double> state) const;
  // alpha = clamp(policy(s) + N(0, sigma), -1, 1); sigma = 0 disables noise.
  double act(std::span<const double> state, double sigma, Rng& rng) const;

  nn::Vector critic_targets(const Batch& batch) const;
  // d/dw of the mean squared TD error; `loss` receives its value.
  nn::GradientTape critic_loss_gradient(const Batch& batch, double* loss = nullptr);
  // d/dtheta of mean Q(s, pi(s)) through the frozen critic; `mean_q`
  // receives the objective.
  nn::GradientTape actor_objective_gradient(const Batch& batch, double* mean_q = nullptr);
  // One descent step on the mean squared TD error; returns the pre-step loss.
  double update_critic(const Batch& batch);
  // One ascent step on mean Q(s, pi(s)) with the critic frozen; returns the
  // pre-step mean Q.
  double update_actor(const Batch& batch);
  void update_targets();

  TrainProgress& progress() { return progress_; }
  const TrainProgress& progress() const { return progress_; }

  nn::DenseNet& actor() { return actor_; }
  nn::DenseNet& critic() { return critic_; }
  nn::DenseNet& target_actor() { return target_actor_; }
  nn::DenseNet& target_critic() { return target_critic_; }
  const nn::DenseNet& actor() const { return actor_; }
  const nn::DenseNet& critic() const { return critic_; }
  const nn::DenseNet& target_actor() const { return target_actor_; }
  const nn::DenseNet& target_critic() const { return target_critic_; }

  // Critic input: state rows followed by one action row.
  static nn::Matrix critic_input(const nn::Matrix& states, const nn::Matrix& actions);

  void save(std::ostream& out) const;
  static DdpgAgent load(std::istream& in);

 private:
  DdpgAgent() = default;

  AgentConfig cfg_;
  nn::DenseNet actor_, critic_, target_actor_, target_critic_;
  nn::Adam actor_opt_, critic_opt_;
  TrainProgress progress_;
};

// Single-flow training environment: one step is one monitoring period.
struct EnvConfig {
  SimConfig sim{};
  SchemeId scheme = SchemeId::kCubic;
  ShimConfig shim{};
  std::int64_t trace_offset_ms = 0;
};

class CcEnv {
 public:
  struct Step {
    double reward = 0.0;
    std::vector<double> state;
    bool done = false;
    MonitorSample sample;
  };

  CcEnv(const Trace& trace, const EnvConfig& cfg);
  std::vector<double> reset();
  Step step(double alpha);
  bool done() const;
  const World& world() const { return *world_; }

 private:
  // Runs ticks until the next period closes (or the episode ends).
  PeriodOutcome advance();

  const Trace* trace_;
  EnvConfig cfg_;
  std::unique_ptr<World> world_;
};

using EnvFactory = std::function<CcEnv(std::int64_t episode, Rng& rng)>;

// Episodes of `cfg.sim.episode_ms` starting at random trace offsets.
EnvFactory random_offset_env_factory(const Trace& trace, EnvConfig cfg);

struct EvalPoint {
  double avg_delay_ms = 0.0;
  double utilization = 0.0;
};

struct CurveRow {
  std::int64_t step = 0;
  double avg_delay_ms = 0.0;
  double utilization = 0.0;
  double mean_reward = 0.0;
};

using Evaluator = std::function<EvalPoint(const DdpgAgent&)>;

struct TrainResult {
  std::vector<CurveRow> curve;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Interact, store, sample, update critic, update actor, soft-update targets,
// once per step after warm-up, until agent.progress().step reaches
// cfg.total_steps. Throws DivergenceError when the median |Q| of recent actor
// updates exceeds 1e6.
TrainResult train(DdpgAgent& agent, const EnvFactory& env_factory, const TrainConfig& cfg,
                  const Evaluator& evaluator = {});

// Greedy actor as a plug-in policy.
class AgentPolicy final : public ActionPolicy {
 public:
  explicit AgentPolicy(const DdpgAgent& agent) : agent_(&agent) {}
  double act(const StateVector& state) override { return agent_->policy(state.values()); }

 private:
  const DdpgAgent* agent_;
};

void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& curve);

}  // namespace deepcc
