#include "deepcc/ddpg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

#include "deepcc/error.hpp"

namespace deepcc {

// ---- replay buffer ----

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error("replay buffer capacity must be positive");
}

void ReplayBuffer::store(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw Error("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw Error("sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[pick(rng)]);
  return out;
}

Batch Batch::from(const std::vector<const Transition*>& items) {
  if (items.empty()) throw Error("empty minibatch");
  const auto dim = static_cast<Eigen::Index>(items.front()->state.size());
  const auto n = static_cast<Eigen::Index>(items.size());
  Batch b;
  b.states.resize(dim, n);
  b.next_states.resize(dim, n);
  b.actions.resize(1, n);
  b.rewards.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = *items[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(t.state.size()) != dim ||
        static_cast<Eigen::Index>(t.next_state.size()) != dim)
      throw ShapeError("inconsistent state widths in minibatch");
    b.states.col(i) = Eigen::Map<const nn::Vector>(t.state.data(), dim);
    b.next_states.col(i) = Eigen::Map<const nn::Vector>(t.next_state.data(), dim);
    b.actions(0, i) = t.action;
    b.rewards[i] = t.reward;
  }
  return b;
}

// ---- agent ----

double cold_start_alpha(std::int64_t step, std::int64_t total) {
  // Nine levels up (-1, -0.75, ..., 1) and eight back down.
  constexpr int kStairs = 17;
  if (total <= 0) return 0.0;
  const auto idx = std::min<std::int64_t>(kStairs - 1, step * kStairs / total);
  const int level = idx <= 8 ? static_cast<int>(idx) : static_cast<int>(16 - idx);
  return -1.0 + 0.25 * level;
}

DdpgAgent::DdpgAgent(const AgentConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.gamma < 0.0 || cfg.gamma >= 1.0) throw Error("gamma must lie in [0, 1)");
  if (cfg.tau < 0.0 || cfg.tau > 1.0) throw Error("tau must lie in [0, 1]");
  if (cfg.hidden.empty()) throw Error("at least one hidden layer is required");
  Rng rng = make_stream(seed, "init");
  const auto dim = static_cast<Eigen::Index>(cfg.state_dim());

  std::vector<nn::LayerSpec> actor_layers;
  for (auto h : cfg.hidden) actor_layers.push_back({h, nn::Activation::kRelu, cfg.actor_batchnorm});
  actor_layers.push_back({1, nn::Activation::kTanh, false});
  std::vector<nn::LayerSpec> critic_layers;
  for (auto h : cfg.hidden) critic_layers.push_back({h, nn::Activation::kRelu, false});
  critic_layers.push_back({1, nn::Activation::kLinear, false});

  actor_ = nn::DenseNet(dim, actor_layers, rng, 3e-3);
  critic_ = nn::DenseNet(dim + 1, critic_layers, rng, 3e-3);
  target_actor_ = actor_;
  target_critic_ = critic_;
  actor_opt_ = nn::Adam(actor_, {.lr = cfg.actor_lr});
  critic_opt_ = nn::Adam(critic_, {.lr = cfg.critic_lr});
}

nn::Matrix DdpgAgent::critic_input(const nn::Matrix& states, const nn::Matrix& actions) {
  if (states.cols() != actions.cols() || actions.rows() != 1)
    throw ShapeError("critic input: states and actions disagree");
  nn::Matrix x(states.rows() + 1, states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(1) = actions;
  return x;
}

double DdpgAgent::policy(std::span<const double> state) const {
  if (state.size() != cfg_.state_dim())
    throw ShapeError("state width " + std::to_string(state.size()) + " != " +
                     std::to_string(cfg_.state_dim()));
  const nn::Matrix x =
      Eigen::Map<const nn::Matrix>(state.data(), static_cast<Eigen::Index>(state.size()), 1);
  return std::clamp(actor_.infer(x)(0, 0), -1.0, 1.0);
}

double explore_action(double mu, double noise) { return std::clamp(mu + noise, -1.0, 1.0); }

double DdpgAgent::act(std::span<const double> state, double sigma, Rng& rng) const {
  const double noise = sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
  return explore_action(policy(state), noise);
}

nn::Vector DdpgAgent::critic_targets(const Batch& batch) const {
  const nn::Matrix next_actions = target_actor_.infer(batch.next_states);
  const nn::Matrix q_next = target_critic_.infer(critic_input(batch.next_states, next_actions));
  return batch.rewards + cfg_.gamma * q_next.row(0).transpose();
}

nn::GradientTape DdpgAgent::critic_loss_gradient(const Batch& batch, double* loss) {
  const nn::Vector y = critic_targets(batch);
  const nn::Matrix q = critic_.forward(critic_input(batch.states, batch.actions), nn::Mode::kTrain);
  const nn::Vector diff = q.row(0).transpose() - y;
  const double n = static_cast<double>(batch.size());
  if (loss) *loss = diff.squaredNorm() / n;
  return critic_.backward((2.0 / n) * diff.transpose());
}

nn::GradientTape DdpgAgent::actor_objective_gradient(const Batch& batch, double* mean_q) {
  const nn::Matrix actions = actor_.forward(batch.states, nn::Mode::kTrain);
  const nn::Matrix q = critic_.forward(critic_input(batch.states, actions), nn::Mode::kTrain);
  const double n = static_cast<double>(batch.size());
  if (mean_q) *mean_q = q.mean();
  // Only the critic's input gradient is used; its parameters stay untouched.
  const auto critic_tape = critic_.backward(nn::Matrix::Constant(1, q.cols(), 1.0 / n));
  return actor_.backward(critic_tape.input.bottomRows(1));
}

double DdpgAgent::update_critic(const Batch& batch) {
  double loss = 0.0;
  auto grads = critic_loss_gradient(batch, &loss);
  critic_opt_.step(critic_, grads);
  return loss;
}

double DdpgAgent::update_actor(const Batch& batch) {
  double mean_q = 0.0;
  auto grads = actor_objective_gradient(batch, &mean_q);
  // Ascent on J: descend on -J.
  grads.for_each_tensor([](std::span<double> g) {
    for (double& v : g) v = -v;
  });
  actor_opt_.step(actor_, grads);
  return mean_q;
}

void DdpgAgent::update_targets() {
  nn::soft_update(actor_, target_actor_, cfg_.tau);
  nn::soft_update(critic_, target_critic_, cfg_.tau);
}

namespace {
constexpr char kAgentMagic[8] = {'D', 'C', 'C', 'A', 'G', 'E', 'N', 'T'};
constexpr std::uint32_t kAgentVersion = 1;
}  // namespace

void DdpgAgent::save(std::ostream& out) const {
  out.write(kAgentMagic, sizeof(kAgentMagic));
  nn::write_u32(out, kAgentVersion);
  nn::write_f64(out, cfg_.gamma);
  nn::write_f64(out, cfg_.tau);
  nn::write_f64(out, cfg_.actor_lr);
  nn::write_f64(out, cfg_.critic_lr);
  nn::write_u64(out, cfg_.buffer_capacity);
  nn::write_u32(out, cfg_.actor_batchnorm ? 1 : 0);
  nn::write_u32(out, static_cast<std::uint32_t>(cfg_.hidden.size()));
  for (auto h : cfg_.hidden) nn::write_u32(out, static_cast<std::uint32_t>(h));
  const auto& s = cfg_.shim;
  nn::write_f64(out, s.target_ms);
  nn::write_u32(out, static_cast<std::uint32_t>(s.history));
  nn::write_f64(out, s.norms.p_scale);
  nn::write_f64(out, s.norms.n_scale);
  nn::write_f64(out, s.norms.cwnd_scale);
  nn::write_u32(out, s.use_kernel ? 1 : 0);
  nn::write_f64(out, s.min_period_ms);
  nn::write_u64(out, static_cast<std::uint64_t>(progress_.step));
  nn::write_f64(out, progress_.sigma);
  actor_.save(out);
  critic_.save(out);
  target_actor_.save(out);
  target_critic_.save(out);
  actor_opt_.save(out);
  critic_opt_.save(out);
  if (!out) throw Error("failed writing agent checkpoint");
}

DdpgAgent DdpgAgent::load(std::istream& in) {
  char magic[sizeof(kAgentMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kAgentMagic, sizeof(magic)) != 0)
    throw ParseError("not an agent checkpoint (bad magic)");
  const auto version = nn::read_u32(in);
  if (version != kAgentVersion)
    throw ParseError("unsupported agent checkpoint version " + std::to_string(version));
  DdpgAgent a;
  auto& c = a.cfg_;
  c.gamma = nn::read_f64(in);
  c.tau = nn::read_f64(in);
  c.actor_lr = nn::read_f64(in);
  c.critic_lr = nn::read_f64(in);
  c.buffer_capacity = nn::read_u64(in);
  c.actor_batchnorm = nn::read_u32(in) != 0;
  const auto layers = nn::read_u32(in);
  if (layers == 0 || layers > 16) throw ParseError("implausible hidden layer count");
  c.hidden.clear();
  for (std::uint32_t i = 0; i < layers; ++i) c.hidden.push_back(nn::read_u32(in));
  c.shim.target_ms = nn::read_f64(in);
  c.shim.history = nn::read_u32(in);
  c.shim.norms.p_scale = nn::read_f64(in);
  c.shim.norms.n_scale = nn::read_f64(in);
  c.shim.norms.cwnd_scale = nn::read_f64(in);
  c.shim.use_kernel = nn::read_u32(in) != 0;
  c.shim.min_period_ms = nn::read_f64(in);
  a.progress_.step = static_cast<std::int64_t>(nn::read_u64(in));
  a.progress_.sigma = nn::read_f64(in);
  a.actor_ = nn::DenseNet::load(in);
  a.critic_ = nn::DenseNet::load(in);
  a.target_actor_ = nn::DenseNet::load(in);
  a.target_critic_ = nn::DenseNet::load(in);
  const auto dim = static_cast<Eigen::Index>(c.state_dim());
  if (a.actor_.input_dim() != dim || a.critic_.input_dim() != dim + 1 ||
      a.actor_.output_dim() != 1 || a.critic_.output_dim() != 1 ||
      !a.actor_.same_shape(a.target_actor_) || !a.critic_.same_shape(a.target_critic_))
    throw ParseError("agent checkpoint networks do not match its header");
  a.actor_opt_ = nn::Adam(a.actor_, {.lr = c.actor_lr});
  a.critic_opt_ = nn::Adam(a.critic_, {.lr = c.critic_lr});
  a.actor_opt_.load(in);
  a.critic_opt_.load(in);
  return a;
}

// ---- environment ----

CcEnv::CcEnv(const Trace& trace, const EnvConfig& cfg) : trace_(&trace), cfg_(cfg) {}

PeriodOutcome CcEnv::advance() {
  auto& w = *world_;
  while (w.now() < cfg_.sim.episode_ms) {
    w.tick();
    if (w.decision_due(0)) return w.close_period(0);
  }
  return w.close_period(0);
}

std::vector<double> CcEnv::reset() {
  FlowSetup f;
  f.scheme = cfg_.scheme;
  f.plugin = cfg_.shim;
  world_ = std::make_unique<World>(*trace_, cfg_.sim, std::vector<FlowSetup>{f}, false,
                                   cfg_.trace_offset_ms);
  advance();
  return world_->shim(0)->state().data();
}

CcEnv::Step CcEnv::step(double alpha) {
  if (!world_) throw Error("environment stepped before reset");
  world_->apply_alpha(0, alpha);
  const PeriodOutcome out = advance();
  Step s;
  s.reward = out.reward;
  s.sample = out.sample;
  s.state = world_->shim(0)->state().data();
  s.done = done();
  return s;
}

bool CcEnv::done() const { return world_ && world_->now() >= cfg_.sim.episode_ms; }

EnvFactory random_offset_env_factory(const Trace& trace, EnvConfig cfg) {
  return [&trace, cfg](std::int64_t, Rng& rng) {
    EnvConfig c = cfg;
    c.trace_offset_ms =
        std::uniform_int_distribution<std::int64_t>(0, trace.period_ms() - 1)(rng);
    return CcEnv(trace, c);
  };
}

// ---- training loop ----

TrainResult train(DdpgAgent& agent, const EnvFactory& env_factory, const TrainConfig& cfg,
                  const Evaluator& evaluator) {
  if (cfg.batch_size == 0 || cfg.warmup_steps < static_cast<std::int64_t>(cfg.batch_size))
    throw Error("warmup_steps must be at least batch_size");
  TrainResult result;
  auto& progress = agent.progress();
  if (progress.step >= cfg.total_steps) return result;
  if (progress.sigma < 0.0) progress.sigma = cfg.noise_sigma;

  // Streams are keyed by the starting step so a resumed run is reproducible.
  const std::string suffix = "@" + std::to_string(progress.step);
  Rng env_rng = make_stream(cfg.seed, "env" + suffix);
  Rng noise_rng = make_stream(cfg.seed, "noise" + suffix);
  Rng replay_rng = make_stream(cfg.seed, "replay" + suffix);

  ReplayBuffer buffer(agent.config().buffer_capacity);
  std::int64_t episode = 0;
  CcEnv env = env_factory(episode, env_rng);
  std::vector<double> state = env.reset();
  std::vector<double> recent_q;
  double reward_sum = 0.0;
  std::int64_t reward_count = 0;
  const std::int64_t first_step = progress.step;

  while (progress.step < cfg.total_steps) {
    const std::int64_t step = progress.step;
    double alpha;
    if (step < cfg.cold_start_steps) {
      alpha = cold_start_alpha(step, cfg.cold_start_steps);
    } else {
      alpha = agent.act(state, progress.sigma, noise_rng);
      progress.sigma = std::max(cfg.noise_min, progress.sigma * cfg.noise_decay);
    }
    CcEnv::Step out = env.step(alpha);
    reward_sum += out.reward;
    ++reward_count;
    buffer.store({state, alpha, out.reward, out.state});
    state = std::move(out.state);

    if (step - first_step + 1 >= cfg.warmup_steps &&
        buffer.size() >= cfg.batch_size) {
      const Batch batch = Batch::from(buffer.sample(cfg.batch_size, replay_rng));
      agent.update_critic(batch);
      const double q = agent.update_actor(batch);
      agent.update_targets();
      recent_q.push_back(std::abs(q));
      if (recent_q.size() >= 100) {
        std::vector<double> tmp = recent_q;
        std::nth_element(tmp.begin(), tmp.begin() + tmp.size() / 2, tmp.end());
        if (tmp[tmp.size() / 2] > 1e6 || !std::isfinite(tmp[tmp.size() / 2]))
          throw DivergenceError("critic diverged: median |Q| = " +
                                std::to_string(tmp[tmp.size() / 2]));
        recent_q.clear();
      }
    }

    ++progress.step;
    if (out.done) {
      env = env_factory(++episode, env_rng);
      state = env.reset();
    }
    if (cfg.eval_every_steps > 0 && progress.step % cfg.eval_every_steps == 0) {
      CurveRow row;
      row.step = progress.step;
      row.mean_reward = reward_count ? reward_sum / reward_count : 0.0;
      if (evaluator) {
        const EvalPoint p = evaluator(agent);
        row.avg_delay_ms = p.avg_delay_ms;
        row.utilization = p.utilization;
      }
      result.curve.push_back(row);
      reward_sum = 0.0;
      reward_count = 0;
    }
  }
  return result;
}

void write_curve_csv(std::ostream& out, const std::vector<CurveRow>& curve) {
  out << "step,avg_delay_ms,utilization,mean_reward\n";
  char buf[160];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6f\n", static_cast<long long>(r.step),
                  r.avg_delay_ms, r.utilization, r.mean_reward);
    out << buf;
  }
}

}  // namespace deepcc
