// Command-line front end: training, evaluation, rollouts, experiments and
// the IK reachability probe.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dskill/controller.hpp"
#include "dskill/errors.hpp"
#include "dskill/harness.hpp"
#include "dskill/ik.hpp"

namespace fs = std::filesystem;
using namespace dskill;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string mode = "hand";
  std::string out;
  std::string cabinets;
  long long steps = -1;
  std::string ckpt;
  std::string chain = "mobile_franka";
  std::string q;
  std::string target;
};

ExperimentConfig base_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config_file(o.config);
  if (o.steps >= 0) cfg.budget = static_cast<std::size_t>(o.steps);
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

// "train", "test", a count N (first N training cabinets) or a seed range "a:b".
std::vector<CabinetModel> select_cabinets(const std::string& spec, const ExperimentConfig& cfg,
                                          const std::string& fallback) {
  const std::string s = spec.empty() ? fallback : spec;
  if (s == "train") return cabinets_for(cfg.train_cabinets, cfg.cabinet_ranges);
  if (s == "test") return cabinets_for(cfg.test_cabinets, cfg.cabinet_ranges);
  try {
    const auto colon = s.find(':');
    if (colon != std::string::npos) {
      const std::uint64_t a = std::stoull(s.substr(0, colon)), b = std::stoull(s.substr(colon + 1));
      if (b <= a) throw ConfigError("cabinet range '" + s + "' is empty");
      return sample_cabinets(a, b - a, cfg.cabinet_ranges);
    }
    const std::size_t n = std::stoul(s);
    if (n == 0 || n > cfg.train_cabinets.count) throw ConfigError("cabinet count '" + s + "' out of range");
    return sample_cabinets(cfg.train_cabinets.first, n, cfg.cabinet_ranges);
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e) != nullptr) throw;
    throw ConfigError("cannot read --cabinets '" + s + "'");
  }
}

std::vector<double> read_numbers(const std::string& text) {
  std::string cleaned = text;
  for (char& c : cleaned) {
    if (c == ',' || c == '[' || c == ']') c = ' ';
  }
  std::istringstream is(cleaned);
  std::vector<double> v;
  double x;
  while (is >> x) v.push_back(x);
  if (!is.eof()) throw ParseError("expected a list of numbers");
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path prepare_out(const std::string& out, const std::string& fallback) {
  const fs::path dir = resolve_output_dir(out.empty() ? fallback : out);
  fs::create_directories(dir);
  return dir;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int cmd_train(const Options& o) {
  ExperimentConfig cfg = base_config(o);
  cfg.validate();
  const AgentMode mode = agent_mode_from_string(o.mode);
  const auto cabinets = select_cabinets(o.cabinets, cfg, "train");
  assert_disjoint(cabinets, cabinets_for(cfg.test_cabinets, cfg.cabinet_ranges));
  const fs::path out = prepare_out(o.out, cfg.output_dir);
  std::ofstream(out / "config.json") << experiment_config_to_json(cfg) << '\n';
  const TrainResult r = train(cfg.train_config(mode, o.seed), cabinets, [](const CurvePoint& p) {
    std::cerr << "step " << p.steps << " return " << p.episode_return << " eval_success " << p.eval_success << '\n';
  });
  save_checkpoint((out / "policy.ckpt.json").string(), r.agent);
  write_curve_csv((out / "curve.csv").string(), r.curve);
  std::cout << "wrote " << (out / "policy.ckpt.json").string() << " and " << (out / "curve.csv").string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.ckpt.empty()) throw CLI::RequiredError("--ckpt");
  ExperimentConfig cfg = base_config(o);
  cfg.validate();
  const AgentMode mode = agent_mode_from_string(o.mode);
  const SacAgent agent = load_checkpoint(o.ckpt);
  const auto cabinets = select_cabinets(o.cabinets, cfg, "test");
  const PolicyFn policy = deterministic_policy(agent.actor);
  const DrawerEnv hand(AgentMode::kFloatingHand);
  const int seeds = static_cast<int>(cfg.seeds.size());
  EvalResult e;
  if (mode == AgentMode::kWholeRobot) {
    if (agent.actor.action_dim == static_cast<int>(hand.action_dim())) {
      // A floating-hand skill executed through the whole-body controller.
      const DrawerEnv robot(AgentMode::kWholeRobot);
      e = evaluate_on_robot(policy, hand, robot, cabinets, cfg.eval_episodes, seeds, cfg.controller,
                            cfg.observation_noise(), o.seed);
    } else {
      e = evaluate(policy, DrawerEnv(AgentMode::kWholeRobot), cabinets, cfg.eval_episodes, seeds,
                   cfg.observation_noise(), o.seed);
    }
  } else {
    e = evaluate(policy, hand, cabinets, cfg.eval_episodes, seeds, cfg.observation_noise(), o.seed);
  }
  MetricsReport report;
  report.experiment = "eval";
  report.config_hash = config_hash(cfg);
  report.code_version = code_version();
  report.conditions.push_back(summarize_condition(o.mode + "/" + (o.cabinets.empty() ? "test" : o.cabinets),
                                                  e.per_seed_success, e.per_seed_length, cfg.eval_episodes));
  const fs::path out = prepare_out(o.out, fs::path(o.ckpt).parent_path().string());
  write_report(out / "metrics.json", report);
  const auto& c = report.conditions.front();
  std::cout << "success " << c.success_mean << " +- " << c.success_ci95 << ", avg length " << c.avg_length << '\n';
  return 0;
}

int cmd_rollout(const Options& o) {
  if (o.ckpt.empty()) throw CLI::RequiredError("--ckpt");
  ExperimentConfig cfg = base_config(o);
  const AgentMode mode = agent_mode_from_string(o.mode);
  const SacAgent agent = load_checkpoint(o.ckpt);
  const auto cabinets = select_cabinets(o.cabinets, cfg, "test");
  const CabinetModel& cab = cabinets.front();
  const PolicyFn policy = deterministic_policy(agent.actor);
  const fs::path out = prepare_out(o.out, fs::path(o.ckpt).parent_path().string());
  const DrawerEnv hand(AgentMode::kFloatingHand);
  const WorldState start = hand.reset(cab, o.seed);
  const HandEpisode ep = run_hand_episode(hand, policy, start);

  auto write_env_trace = [](const fs::path& path, const DrawerEnv& env, const std::vector<WorldState>& states) {
    std::ofstream os(path);
    write_trace_header(os, env.chain().dof());
    for (std::size_t t = 0; t < states.size(); ++t) {
      const double r = t == 0 ? 0.0 : env.reward(states[t - 1], Action{}, states[t]);
      const bool done = t + 1 == states.size();
      write_trace_row(os, env, states[t], r, done);
    }
  };
  write_env_trace(out / "hand_trace.csv", hand, ep.states);
  std::cout << "hand episode: " << (ep.success ? "success" : "failure") << " in " << ep.states.size() - 1
            << " steps\n";
  if (mode == AgentMode::kWholeRobot) {
    const DrawerEnv robot(AgentMode::kWholeRobot);
    const WorldState synced = sync_environments(start, hand, robot.reset(cab, o.seed), robot, o.seed);
    const RobotEpisode r = execute_on_robot(robot, synced, hand, ep, &policy, cfg.controller);
    write_env_trace(out / "robot_trace.csv", robot, r.states);
    std::ofstream os(out / "control_trace.csv");
    write_control_trace_header(os, robot.chain().dof());
    for (std::size_t t = 0; t < r.steps.size(); ++t) write_control_trace_row(os, static_cast<int>(t), r.steps[t]);
    std::cout << "robot execution: " << (r.success ? "success" : "failure") << ", tracking rms " << r.tracking_rms
              << " m, max |qdot| " << r.max_qdot << (r.controller_failed ? ", controller failed: " + r.failure : "")
              << '\n';
  }
  return 0;
}

int cmd_experiment(const Options& o, ExperimentKind kind, bool keep_kind) {
  ExperimentConfig cfg = base_config(o);
  if (!keep_kind) cfg.kind = kind;
  const MetricsReport report = run_experiment(cfg, log_line);
  for (const auto& c : report.conditions) {
    std::cout << c.condition << ": success " << c.success_mean << " +- " << c.success_ci95 << ", avg length "
              << c.avg_length << '\n';
  }
  for (const auto& [k, v] : report.values) std::cout << k << ": " << v << '\n';
  std::cout << "report " << (resolve_output_dir(cfg.output_dir) / "metrics.json").string() << '\n';
  return 0;
}

int cmd_probe(const Options& o) {
  const KinematicChain chain =
      fs::exists(o.chain) ? load_chain_file(o.chain) : bundled_chain(o.chain);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(chain.dof()));
  if (!o.q.empty()) {
    const auto v = read_numbers(fs::exists(o.q) ? read_file(o.q) : o.q);
    if (v.size() != chain.dof()) {
      throw ParseError("--q has " + std::to_string(v.size()) + " values, chain has " + std::to_string(chain.dof()));
    }
    q = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (o.target.empty()) throw CLI::RequiredError("--target");
  const auto t = read_numbers(o.target);
  Pose target = forward_kinematics(chain, q);
  if (t.size() == 3 || t.size() == 7) {
    target.position = Eigen::Vector3d(t[0], t[1], t[2]);
    if (t.size() == 7) target.orientation = Eigen::Quaterniond(t[3], t[4], t[5], t[6]).normalized();
  } else {
    throw ParseError("--target needs x,y,z or x,y,z,qw,qx,qy,qz");
  }
  ControllerConfig cfg;
  if (!o.config.empty()) cfg = load_experiment_config_file(o.config).controller;
  IkOptions ik = cfg.ik;
  ik.seed = o.seed;
  const IkResult r = solve_ik(chain, q, target, ik);
  std::cout << std::setprecision(6);
  std::cout << "z_res " << r.z_res << '\n'
            << "iterations " << r.iterations_used << '\n'
            << "position_error " << r.position_error << '\n'
            << "orientation_error " << r.orientation_error << '\n'
            << "lock_base " << (ik.lock_base ? 1 : 0) << '\n';
  if (r.q_hat) std::cout << "q_hat " << r.q_hat->transpose() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drawer-opening skill learning and whole-body execution"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Experiment config (JSON)");
    c->add_option("--seed", o.seed, "Training or evaluation seed");
    c->add_option("--out", o.out, "Output directory");
  };
  auto add_mode = [&](CLI::App* c) {
    c->add_option("--mode", o.mode, "hand | robot")->check(CLI::IsMember({"hand", "robot", "floating_hand", "whole_robot"}));
  };

  auto* train = app.add_subcommand("train", "Train one SAC policy");
  add_common(train);
  add_mode(train);
  train->add_option("--cabinets", o.cabinets, "train | test | N | a:b");
  train->add_option("--steps", o.steps, "Environment step budget");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write a metrics report");
  add_common(eval);
  add_mode(eval);
  eval->add_option("--ckpt", o.ckpt, "Policy checkpoint")->required();
  eval->add_option("--cabinets", o.cabinets, "train | test | N | a:b");

  auto* rollout = app.add_subcommand("rollout", "Record one episode as trace CSVs");
  add_common(rollout);
  add_mode(rollout);
  rollout->add_option("--ckpt", o.ckpt, "Policy checkpoint")->required();
  rollout->add_option("--cabinets", o.cabinets, "train | test | N | a:b (first cabinet is used)");

  auto* compare = app.add_subcommand("compare", "Floating hand vs whole robot learning curves");
  add_common(compare);
  compare->add_option("--steps", o.steps, "Environment step budget per policy");

  auto* sweep = app.add_subcommand("sweep", "Training-set size sweep");
  add_common(sweep);
  sweep->add_option("--steps", o.steps, "Environment step budget per policy");

  auto* run = app.add_subcommand("run", "Run the experiment named in the config");
  add_common(run);
  run->add_option("--steps", o.steps, "Environment step budget per policy");

  auto* demo = app.add_subcommand("demo-singularity", "QP controller vs pseudoinverse near a singularity");
  add_common(demo);

  auto* probe = app.add_subcommand("probe", "Fixed-base reachability probe");
  probe->add_option("--config", o.config, "Experiment config (controller section is used)");
  probe->add_option("--seed", o.seed, "IK restart seed");
  probe->add_option("--chain", o.chain, "Bundled chain name or chain file");
  probe->add_option("--q", o.q, "Joint vector: file or comma-separated values");
  probe->add_option("--target", o.target, "x,y,z[,qw,qx,qy,qz]")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*rollout) return cmd_rollout(o);
    if (*compare) return cmd_experiment(o, ExperimentKind::kModeComparison, false);
    if (*sweep) return cmd_experiment(o, ExperimentKind::kTrainingSizeSweep, false);
    if (*run) return cmd_experiment(o, ExperimentKind::kLearningCurves, true);
    if (*demo) return cmd_experiment(o, ExperimentKind::kSingularityDemo, false);
    if (*probe) return cmd_probe(o);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
