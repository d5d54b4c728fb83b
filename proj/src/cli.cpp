#include "deepcc/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "deepcc/cc.hpp"
#include "deepcc/ddpg.hpp"
#include "deepcc/error.hpp"
#include "deepcc/metrics.hpp"
#include "deepcc/sim.hpp"
#include "deepcc/trace.hpp"

namespace deepcc {

namespace {

namespace fs = std::filesystem;

constexpr const char* kOutDirEnv = "DEEPCC_OUT_DIR";

// Merged view of the simulator, plug-in, and training settings.
struct RunConfig {
  SimConfig sim{};
  TrainConfig train{};
  std::string scheme = "cubic";
  double target_ms = 50.0;
  std::size_t history = 20;
  bool no_kernel = false;
  std::vector<std::string> traces;
  std::string out_dir;
  std::uint64_t seed = 1;
  std::vector<int> hidden{128, 128};
  std::int64_t train_episode_ms = 30000;
  std::int64_t duration_ms = 0;  // 0: one full trace cycle
};

std::string resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
  return ".";
}

fs::path out_path(const std::string& dir, const std::string& explicit_path,
                  const std::string& default_name) {
  if (!explicit_path.empty()) return explicit_path;
  fs::create_directories(dir);
  return fs::path(dir) / default_name;
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << contents;
  if (!f) throw Error("failed writing " + path.string());
}

void add_sim_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--mrtt", rc.sim.mrtt_ms, "Minimum RTT in ms")->capture_default_str();
  cmd->add_option("--buffer", rc.sim.buffer_bytes, "Bottleneck buffer in bytes")
      ->capture_default_str();
  cmd->add_flag("!--shared-queue", rc.sim.per_flow_queues,
                "One FIFO shared by all flows instead of per-flow queues");
  cmd->add_option("--duration-ms", rc.duration_ms, "Episode length (0: one trace cycle)");
}

ShimConfig shim_from(const RunConfig& rc) {
  ShimConfig s;
  s.target_ms = rc.target_ms;
  s.history = rc.history;
  s.use_kernel = !rc.no_kernel;
  return s;
}

// A trace file, or "const:<Mbps>" for a constant-rate link.
const Trace& require_trace(const RunConfig& rc, std::optional<Trace>& storage) {
  if (rc.traces.empty()) throw Error("--trace is required");
  const std::string& spec = rc.traces.front();
  if (spec.rfind("const:", 0) == 0) {
    double mbps = 0.0;
    try {
      mbps = std::stod(spec.substr(6));
    } catch (const std::exception&) {
      throw Error("bad constant link rate: " + spec);
    }
    if (!(mbps > 0.0)) throw Error("constant link rate must be positive");
    SynthTraceConfig cfg;
    cfg.duration_s = 60.0;
    cfg.target_mean = cfg.min_rate = cfg.max_rate = mbps;
    cfg.target_std = 0.0;
    storage = generate_synthetic_trace(cfg);
  } else {
    storage = load_trace(spec);
  }
  return *storage;
}

DdpgAgent load_agent(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  return DdpgAgent::load(in);
}

void save_agent(const DdpgAgent& agent, const fs::path& path) {
  std::ostringstream buf;
  agent.save(buf);
  write_file(path, buf.str());
}

// Checks that a checkpoint's feature layout matches the requested plug-in.
void check_agent_shape(const DdpgAgent& agent, const ShimConfig& shim) {
  const auto& trained = agent.config().shim;
  if (trained.history != shim.history || trained.use_kernel != shim.use_kernel)
    throw Error("checkpoint was trained with history=" + std::to_string(trained.history) +
                (trained.use_kernel ? "" : " (kernel off)") +
                ", incompatible with the requested feature shape");
}

EvalPoint evaluate_agent(const DdpgAgent& agent, SchemeId scheme, const Trace& trace,
                         SimConfig sim, const ShimConfig& shim) {
  AgentPolicy policy(agent);
  const EpisodeLog log = run_episode(scheme, &policy, trace, sim, shim);
  const FlowMetrics m = flow_metrics(log);
  return {m.avg_delay_ms, m.utilization};
}

int cmd_trace_gen(const SynthTraceConfig& cfg, const std::string& output, std::ostream& out) {
  const Trace t = generate_synthetic_trace(cfg);
  save_trace(t, output);
  out << "wrote " << t.size() << " opportunities to " << output << '\n';
  return 0;
}

int cmd_trace_stats(const std::string& path, std::int64_t bucket_ms, std::ostream& out) {
  const Trace t = load_trace(path);
  out << stats_csv_header() << '\n' << stats_csv_row(trace_capacity_stats(t, bucket_ms)) << '\n';
  return 0;
}

int cmd_train(RunConfig rc, const std::string& resume, const std::string& ckpt_out,
              const std::string& curve_out, std::ostream& out) {
  std::optional<Trace> storage;
  const Trace& trace = require_trace(rc, storage);
  const SchemeId scheme = parse_scheme_id(rc.scheme);
  rc.train.seed = rc.seed;

  AgentConfig acfg;
  acfg.shim = shim_from(rc);
  acfg.hidden.assign(rc.hidden.begin(), rc.hidden.end());
  std::optional<DdpgAgent> agent;
  if (!resume.empty()) {
    agent.emplace(load_agent(resume));
    check_agent_shape(*agent, acfg.shim);
  } else {
    agent.emplace(acfg, rc.seed);
  }

  EnvConfig env;
  env.sim = rc.sim;
  env.sim.episode_ms = rc.train_episode_ms;
  env.scheme = scheme;
  env.shim = agent->config().shim;
  SimConfig eval_sim = rc.sim;
  eval_sim.episode_ms = rc.duration_ms > 0 ? rc.duration_ms : trace.period_ms();
  const Evaluator evaluator = [&](const DdpgAgent& a) {
    return evaluate_agent(a, scheme, trace, eval_sim, a.config().shim);
  };

  const TrainResult result =
      train(*agent, random_offset_env_factory(trace, env), rc.train, evaluator);

  const std::string dir = resolve_out_dir(rc.out_dir);
  const fs::path ckpt = out_path(dir, ckpt_out, "checkpoint.bin");
  const fs::path curve = out_path(dir, curve_out, "curve.csv");
  save_agent(*agent, ckpt);
  std::ostringstream csv;
  write_curve_csv(csv, result.curve);
  write_file(curve, csv.str());
  out << "trained to step " << agent->progress().step << "; checkpoint " << ckpt.string()
      << ", curve " << curve.string() << '\n';
  return 0;
}

int cmd_eval(RunConfig rc, const std::string& plugin, int flows, std::int64_t stagger_ms,
             const std::string& output, std::ostream& out) {
  if (flows < 1) throw Error("--flows must be at least 1");
  std::optional<Trace> storage;
  const Trace& trace = require_trace(rc, storage);
  const SchemeId scheme = parse_scheme_id(rc.scheme);
  rc.sim.episode_ms = rc.duration_ms > 0 ? rc.duration_ms : trace.period_ms();

  std::optional<DdpgAgent> agent;
  std::unique_ptr<AgentPolicy> policy;
  ShimConfig shim = shim_from(rc);
  if (!plugin.empty()) {
    agent.emplace(load_agent(plugin));
    check_agent_shape(*agent, shim);
    shim.norms = agent->config().shim.norms;
    shim.min_period_ms = agent->config().shim.min_period_ms;
    policy = std::make_unique<AgentPolicy>(*agent);
  } else if (scheme == SchemeId::kCleanSlate) {
    throw Error("clean_slate_drl requires --plugin");
  }

  std::vector<FlowSetup> setups;
  std::vector<ActionPolicy*> policies;
  for (int i = 0; i < flows; ++i) {
    FlowSetup f;
    f.scheme = scheme;
    f.start_ms = i * stagger_ms;
    if (policy) f.plugin = shim;
    setups.push_back(f);
    policies.push_back(policy.get());
  }
  const EpisodeLog log = run_episode(trace, rc.sim, setups, policies);

  std::ostringstream csv;
  csv << "scheme,mode,target_ms,flows," << metrics_csv_header();
  for (int i = 0; i < flows && flows > 1; ++i) csv << ",rate_bps_" << i;
  if (flows > 1) csv << ",jain_index";
  csv << '\n';
  const FlowMetrics m = flows == 1 ? flow_metrics(log) : aggregate_metrics(log);
  char target[32];
  std::snprintf(target, sizeof(target), "%g", rc.target_ms);
  csv << to_string(scheme) << ',' << (policy ? "deepcc" : "raw") << ',' << target << ','
      << flows << ',' << metrics_csv_fields(m);
  if (flows > 1) {
    std::vector<double> rates;
    for (int i = 0; i < flows; ++i) {
      rates.push_back(flow_metrics(log, static_cast<std::size_t>(i)).throughput_bps);
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.1f", rates.back());
      csv << buf;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",%.6f", jain_index(rates));
    csv << buf;
  }
  csv << '\n';
  out << csv.str();
  if (!output.empty()) write_file(output, csv.str());
  return 0;
}

int cmd_sweep(RunConfig rc, const std::string& axis_name, const std::vector<double>& values,
              const std::string& plugin, const std::string& output, std::ostream& out) {
  if (values.empty()) throw CLI::ValidationError("--values", "at least one value is required");
  const SweepAxis axis = parse_sweep_axis(axis_name);
  std::optional<Trace> storage;
  const Trace& trace = require_trace(rc, storage);
  const SchemeId scheme = parse_scheme_id(rc.scheme);
  rc.sim.episode_ms = rc.duration_ms > 0 ? rc.duration_ms : trace.period_ms();

  ShimConfig shim = shim_from(rc);
  std::optional<DdpgAgent> agent;
  std::unique_ptr<AgentPolicy> policy;
  if (!plugin.empty()) {
    agent.emplace(load_agent(plugin));
    check_agent_shape(*agent, shim);
    shim.norms = agent->config().shim.norms;
    policy = std::make_unique<AgentPolicy>(*agent);
  }
  const auto rows = sweep(axis, values, scheme, policy.get(), trace, rc.sim, shim);
  std::ostringstream csv;
  write_sweep_csv(csv, axis, rows);
  const fs::path path = out_path(resolve_out_dir(rc.out_dir), output, "sweep_" + axis_name + ".csv");
  write_file(path, csv.str());
  out << csv.str();
  return 0;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Replaces `--config FILE` with the file's key=value pairs rendered as flags,
// skipping keys already given on the command line so flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw Error("--config needs a file");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty()) return out;
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::vector<std::string> extra;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value in " + path, lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    if (key.empty() || has_flag(out, flag)) continue;
    if (value == "true") {
      extra.push_back(flag);
    } else if (value != "false") {
      extra.push_back(flag);
      extra.push_back(value);
    }
  }
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"deepcc: trace-driven DRL congestion-window capping"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;  // consumed by expand_config before parsing

  // trace gen / stats
  auto* trace_cmd = app.add_subcommand("trace", "Synthesize or analyze link traces");
  trace_cmd->require_subcommand(1);
  SynthTraceConfig synth;
  std::string gen_out;
  auto* gen = trace_cmd->add_subcommand("gen", "Write a synthetic variable-rate trace");
  gen->add_option("--mean", synth.target_mean, "Target mean rate (Mbps)")->capture_default_str();
  gen->add_option("--std", synth.target_std, "Target rate std deviation (Mbps)")
      ->capture_default_str();
  gen->add_option("--min", synth.min_rate, "Minimum rate (Mbps)")->capture_default_str();
  gen->add_option("--max", synth.max_rate, "Maximum rate (Mbps)")->capture_default_str();
  gen->add_option("--dwell-ms", synth.dwell_ms, "Mean holding time of a rate level")
      ->capture_default_str();
  gen->add_option("--duration", synth.duration_s, "Length in seconds")->capture_default_str();
  gen->add_option("--seed", synth.seed, "RNG seed")->capture_default_str();
  gen->add_option("-o,--output", gen_out, "Output trace file")->required();
  gen->add_option("--config", config_path, "key=value configuration file; flags override it");

  std::string stats_path;
  std::int64_t bucket_ms = 1000;
  auto* stats = trace_cmd->add_subcommand("stats", "Print capacity statistics as CSV");
  stats->add_option("trace", stats_path, "Trace file")->required();
  stats->add_option("--bucket-ms", bucket_ms, "Bucket width")->capture_default_str();

  // shared run options
  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file; flags override it");
    cmd->add_option("--scheme", rc.scheme, "aimd|cubic|westwood|illinois|clean_slate_drl")
        ->capture_default_str();
    cmd->add_option("--trace", rc.traces, "Trace file, or const:<Mbps>")->required();
    cmd->add_option("--target", rc.target_ms, "Target delay (ms)")->capture_default_str();
    cmd->add_option("--history", rc.history, "Observations in the state (m)")
        ->capture_default_str();
    cmd->add_flag("--no-kernel", rc.no_kernel, "Disable the delay filter kernel");
    cmd->add_option("--seed", rc.seed, "Master seed")->capture_default_str();
    cmd->add_option("--out-dir", rc.out_dir, std::string("Output directory (default $") +
                                                  kOutDirEnv + " or .)");
    add_sim_options(cmd, rc);
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a DeepCC agent");
  add_run_options(train_cmd);
  std::string resume, ckpt_out, curve_out;
  train_cmd->add_option("--steps", rc.train.total_steps, "Total training steps")
      ->capture_default_str();
  train_cmd->add_option("--batch", rc.train.batch_size, "Minibatch size")->capture_default_str();
  train_cmd->add_option("--warmup", rc.train.warmup_steps, "Transitions collected before updates start")
      ->capture_default_str();
  train_cmd->add_option("--cold-start", rc.train.cold_start_steps, "Steps of the scripted exploration walk")
      ->capture_default_str();
  train_cmd->add_option("--noise-sigma", rc.train.noise_sigma, "Initial exploration noise std")
      ->capture_default_str();
  train_cmd->add_option("--eval-every", rc.train.eval_every_steps, "Learning-curve evaluation interval")
      ->capture_default_str();
  train_cmd->add_option("--episode-ms", rc.train_episode_ms, "Training episode length")
      ->capture_default_str();
  train_cmd->add_option("--hidden", rc.hidden, "Hidden layer widths")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--resume", resume, "Continue from this checkpoint");
  train_cmd->add_option("--checkpoint", ckpt_out, "Checkpoint path (default <out>/checkpoint.bin)");
  train_cmd->add_option("--curve", curve_out, "Learning curve CSV (default <out>/curve.csv)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run and score an episode");
  add_run_options(eval_cmd);
  std::string plugin, eval_out;
  int flows = 1;
  std::int64_t stagger_ms = 0;
  eval_cmd->add_option("--plugin", plugin, "Agent checkpoint enabling the plug-in");
  eval_cmd->add_option("--flows", flows, "Number of simultaneous flows")->capture_default_str();
  eval_cmd->add_option("--stagger-ms", stagger_ms, "Start flow i at i * stagger")
      ->capture_default_str();
  eval_cmd->add_option("-o,--output", eval_out, "Also write the CSV here");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep buffer, mRTT or Target");
  add_run_options(sweep_cmd);
  std::string axis, sweep_out;
  std::vector<double> values;
  sweep_cmd->add_option("--axis", axis, "buffer|mrtt|target")->required();
  sweep_cmd->add_option("--values", values, "Comma-separated values")->delimiter(',');
  sweep_cmd->add_option("--plugin", plugin, "Agent checkpoint for plug-in rows");
  sweep_cmd->add_option("-o,--output", sweep_out, "CSV path (default <out>/sweep_<axis>.csv)");

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  std::vector<const char*> argv;
  for (const auto& a : expanded) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_trace_gen(synth, gen_out, out);
    if (stats->parsed()) return cmd_trace_stats(stats_path, bucket_ms, out);
    if (train_cmd->parsed()) return cmd_train(rc, resume, ckpt_out, curve_out, out);
    if (eval_cmd->parsed()) return cmd_eval(rc, plugin, flows, stagger_ms, eval_out, out);
    if (sweep_cmd->parsed()) return cmd_sweep(rc, axis, values, plugin, sweep_out, out);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace deepcc
