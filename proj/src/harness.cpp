#include "dskill/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "dskill/errors.hpp"
#include "version.hpp"

namespace dskill {

namespace {

using nlohmann::json;

// Fixed evaluation seed base so every condition sees the same episodes.
constexpr std::uint64_t kEvalSeedBase = 0xE7A1;

const std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::kLearningCurves, "learning_curves"},
    {ExperimentKind::kTrainingSizeSweep, "training_size_sweep"},
    {ExperimentKind::kModeComparison, "mode_comparison"},
    {ExperimentKind::kSingularityDemo, "singularity_demo"},
    {ExperimentKind::kRandomSplitAblation, "random_split_ablation"},
};

template <typename T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string file_tag(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '=' || c == ' ') c = '_';
  }
  return s;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (const auto& [k, name] : kKindNames) {
    if (s == name) return k;
  }
  throw ParseError("unknown experiment kind '" + s + "'");
}

std::vector<std::uint64_t> SeedRange::seeds() const {
  std::vector<std::uint64_t> out(count);
  std::iota(out.begin(), out.end(), first);
  return out;
}

bool SeedRange::overlaps(const SeedRange& other) const {
  if (count == 0 || other.count == 0) return false;
  return first < other.first + other.count && other.first < first + count;
}

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config: no training seeds");
  if (has_duplicates(seeds)) throw ConfigError("config: duplicate training seeds");
  if (train_cabinets.count == 0) throw ConfigError("config: empty training cabinet range");
  if (train_cabinets.overlaps(test_cabinets)) throw ConfigError("config: train and test cabinet seeds overlap");
  cabinet_ranges.validate();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw ConfigError("config: training set size must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("config: sizes must be strictly ascending");
  }
  if (!sizes.empty() && sizes.back() > train_cabinets.count) {
    throw ConfigError("config: size exceeds the number of training cabinets");
  }
  for (std::size_t c : cabinet_counts) {
    if (c == 0 || c > train_cabinets.count) throw ConfigError("config: cabinet count out of range");
  }
  if (has_duplicates(split_seeds)) throw ConfigError("config: duplicate split seeds");
  if (eval_episodes <= 0 || curve_eval_episodes <= 0) throw ConfigError("config: evaluation episodes must be positive");
  if (workers < 1) throw ConfigError("config: workers must be at least 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("config: noise_sigma must be non-negative");

  switch (kind) {
    case ExperimentKind::kTrainingSizeSweep:
      if (sizes.empty()) throw ConfigError("config: sweep needs sizes");
      if (test_cabinets.count == 0) throw ConfigError("config: sweep needs a test set");
      break;
    case ExperimentKind::kModeComparison: {
      const bool hand = std::find(modes.begin(), modes.end(), AgentMode::kFloatingHand) != modes.end();
      const bool robot = std::find(modes.begin(), modes.end(), AgentMode::kWholeRobot) != modes.end();
      if (!hand || !robot) throw ConfigError("config: mode comparison needs both agent modes");
      [[fallthrough]];
    }
    case ExperimentKind::kLearningCurves:
      if (modes.empty() || cabinet_counts.empty()) throw ConfigError("config: no conditions to train");
      break;
    case ExperimentKind::kRandomSplitAblation:
      if (split_seeds.size() < 3) throw ConfigError("config: random split ablation needs at least 3 split seeds");
      if (split_pool <= train_cabinets.count) throw ConfigError("config: split pool must exceed the training count");
      break;
    case ExperimentKind::kSingularityDemo:
      break;
  }
  train_config(AgentMode::kFloatingHand, seeds.front()).validate();
  controller.validate(bundled_chain("mobile_franka").dof());
}

TrainConfig ExperimentConfig::train_config(AgentMode mode, std::uint64_t seed) const {
  TrainConfig t;
  t.mode = mode;
  t.hyper = sac;
  t.hyper.seed = seed;
  t.budget = budget;
  t.warmup = warmup;
  t.eval_interval = eval_interval;
  t.eval_episodes = curve_eval_episodes;
  t.noise = observation_noise();
  return t;
}

ObservationNoise ExperimentConfig::observation_noise() const {
  ObservationNoise n;
  n.cabinet = n.link = n.handle = n.size = noise_sigma;
  return n;
}

namespace {

json seed_range_to_json(const SeedRange& r) { return {{"first", r.first}, {"count", r.count}}; }

SeedRange seed_range_from_json(const json& j) {
  SeedRange r;
  r.first = j.at("first").get<std::uint64_t>();
  r.count = j.at("count").get<std::size_t>();
  return r;
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.kind);
  j["seeds"] = c.seeds;
  j["train_cabinets"] = seed_range_to_json(c.train_cabinets);
  j["test_cabinets"] = seed_range_to_json(c.test_cabinets);
  j["cabinet_ranges"] = json::parse(cabinet_ranges_to_json(c.cabinet_ranges));
  j["sizes"] = c.sizes;
  j["split_pool"] = c.split_pool;
  j["split_seeds"] = c.split_seeds;
  std::vector<std::string> modes;
  for (AgentMode m : c.modes) modes.push_back(to_string(m));
  j["modes"] = modes;
  j["cabinet_counts"] = c.cabinet_counts;
  j["sac"] = {{"gamma", c.sac.gamma},
              {"tau", c.sac.tau},
              {"lr", c.sac.lr},
              {"batch_size", c.sac.batch_size},
              {"buffer_capacity", c.sac.buffer_capacity},
              {"target_entropy_scale", c.sac.target_entropy_scale},
              {"hidden", c.sac.hidden},
              {"initial_alpha", c.sac.initial_alpha},
              {"updates_per_step", c.sac.updates_per_step}};
  j["budget"] = c.budget;
  j["warmup"] = c.warmup;
  j["eval_interval"] = c.eval_interval;
  j["curve_eval_episodes"] = c.curve_eval_episodes;
  j["eval_episodes"] = c.eval_episodes;
  j["robot_eval"] = c.robot_eval;
  const Eigen::VectorXd& qm = c.controller.qdot_max;
  j["controller"] = {{"k", c.controller.k},
                     {"omega1", c.controller.omega1},
                     {"omega2", c.controller.omega2},
                     {"dt", c.controller.dt},
                     {"qdot_max", std::vector<double>(qm.data(), qm.data() + qm.size())},
                     {"respect_position_limits", c.controller.respect_position_limits},
                     {"relaxed_penalty", c.controller.relaxed_penalty}};
  j["noise_sigma"] = c.noise_sigma;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError("config: '" + where + "' must be an object");
  for (const auto& item : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
      throw ParseError("config: unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    const json j = json::parse(json_text);
    check_keys(j,
               {"experiment", "seeds", "train_cabinets", "test_cabinets", "cabinet_ranges", "sizes", "split_pool",
                "split_seeds", "modes", "cabinet_counts", "sac", "budget", "warmup", "eval_interval",
                "curve_eval_episodes", "eval_episodes", "robot_eval", "controller", "noise_sigma", "output_dir",
                "workers"},
               "top level");
    if (j.contains("experiment")) c.kind = experiment_kind_from_string(j.at("experiment").get<std::string>());
    read(j, "seeds", c.seeds);
    if (j.contains("train_cabinets")) c.train_cabinets = seed_range_from_json(j.at("train_cabinets"));
    if (j.contains("test_cabinets")) c.test_cabinets = seed_range_from_json(j.at("test_cabinets"));
    if (j.contains("cabinet_ranges")) {
      const json& r = j.at("cabinet_ranges");
      c.cabinet_ranges = r.is_string() ? load_cabinet_ranges_file((base_dir / r.get<std::string>()).string())
                                       : load_cabinet_ranges(r.dump());
    }
    read(j, "sizes", c.sizes);
    read(j, "split_pool", c.split_pool);
    read(j, "split_seeds", c.split_seeds);
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(agent_mode_from_string(m.get<std::string>()));
    }
    read(j, "cabinet_counts", c.cabinet_counts);
    if (j.contains("sac")) {
      const json& s = j.at("sac");
      check_keys(s, {"gamma", "tau", "lr", "batch_size", "buffer_capacity", "target_entropy_scale", "hidden", "initial_alpha",
                     "updates_per_step"},
                 "sac");
      read(s, "gamma", c.sac.gamma);
      read(s, "tau", c.sac.tau);
      read(s, "lr", c.sac.lr);
      read(s, "batch_size", c.sac.batch_size);
      read(s, "buffer_capacity", c.sac.buffer_capacity);
      read(s, "target_entropy_scale", c.sac.target_entropy_scale);
      read(s, "hidden", c.sac.hidden);
      read(s, "initial_alpha", c.sac.initial_alpha);
      read(s, "updates_per_step", c.sac.updates_per_step);
    }
    read(j, "budget", c.budget);
    read(j, "warmup", c.warmup);
    read(j, "eval_interval", c.eval_interval);
    read(j, "curve_eval_episodes", c.curve_eval_episodes);
    read(j, "eval_episodes", c.eval_episodes);
    read(j, "robot_eval", c.robot_eval);
    if (j.contains("controller")) {
      const json& k = j.at("controller");
      check_keys(k, {"k", "omega1", "omega2", "dt", "qdot_max", "respect_position_limits", "relaxed_penalty"},
                 "controller");
      read(k, "k", c.controller.k);
      read(k, "omega1", c.controller.omega1);
      read(k, "omega2", c.controller.omega2);
      read(k, "dt", c.controller.dt);
      if (k.contains("qdot_max")) {
        const auto v = k.at("qdot_max").get<std::vector<double>>();
        c.controller.qdot_max = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      read(k, "respect_position_limits", c.controller.respect_position_limits);
      read(k, "relaxed_penalty", c.controller.relaxed_penalty);
    }
    read(j, "noise_sigma", c.noise_sigma);
    read(j, "output_dir", c.output_dir);
    read(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return load_experiment_config(ss.str(), std::filesystem::path(path).parent_path());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // Where results go and how many threads produce them do not change them.
  json j = config_json(cfg);
  j.erase("output_dir");
  j.erase("workers");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

std::string code_version() { return DSKILL_CODE_VERSION; }

std::filesystem::path resolve_output_dir(const std::string& dir) {
  const std::filesystem::path p(dir);
  const char* root = std::getenv("DSKILL_OUTPUT_ROOT");
  if (root != nullptr && *root != '\0' && p.is_relative()) return std::filesystem::path(root) / p;
  return p;
}

// ---------------------------------------------------------------- metrics

double t_quantile_975(int dof) {
  if (dof < 1) throw ContractViolation("t_quantile_975: need at least one degree of freedom");
  return boost::math::quantile(boost::math::students_t(dof), 0.975);
}

ConditionMetrics summarize_condition(const std::string& condition, const std::vector<double>& per_seed_success,
                                     const std::vector<double>& per_seed_length, int episodes_per_seed) {
  ConditionMetrics m;
  m.condition = condition;
  m.per_seed_success = per_seed_success;
  m.per_seed_length = per_seed_length;
  m.episodes_per_seed = episodes_per_seed;
  m.success_mean = mean_of(per_seed_success);
  m.avg_length = mean_of(per_seed_length);
  const std::size_t n = per_seed_success.size();
  if (n >= 2) {
    double ss = 0.0;
    for (double v : per_seed_success) ss += (v - m.success_mean) * (v - m.success_mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    m.success_ci95 = t_quantile_975(static_cast<int>(n - 1)) * sd / std::sqrt(static_cast<double>(n));
  }
  return m;
}

const ConditionMetrics& MetricsReport::at(const std::string& condition) const {
  for (const auto& c : conditions) {
    if (c.condition == condition) return c;
  }
  throw ContractViolation("report has no condition '" + condition + "'");
}

std::string MetricsReport::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["config_hash"] = config_hash;
  j["code_version"] = code_version;
  json conds = json::array();
  for (const auto& c : conditions) {
    conds.push_back({{"condition", c.condition},
                     {"success_mean", c.success_mean},
                     {"success_ci95", c.success_ci95},
                     {"avg_length", c.avg_length},
                     {"episodes_per_seed", c.episodes_per_seed},
                     {"per_seed_success", c.per_seed_success},
                     {"per_seed_length", c.per_seed_length}});
  }
  j["conditions"] = conds;
  j["values"] = values;
  return j.dump(2);
}

void write_report(const std::filesystem::path& path, const MetricsReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report '" + path.string() + "'");
  os << report.to_json() << '\n';
}

// ---------------------------------------------------------------- cabinets

std::vector<CabinetModel> cabinets_for(const SeedRange& range, const CabinetRanges& ranges) {
  return sample_cabinets(range.first, range.count, ranges);
}

void assert_disjoint(const std::vector<CabinetModel>& train, const std::vector<CabinetModel>& test) {
  std::set<int> ids;
  for (const auto& c : train) ids.insert(c.id);
  for (const auto& c : test) {
    if (ids.count(c.id) != 0) throw ConfigError("cabinet " + std::to_string(c.id) + " is in both train and test sets");
  }
}

CabinetSplit random_split(const std::vector<CabinetModel>& pool, std::size_t train_count, std::uint64_t split_seed) {
  if (train_count > pool.size()) throw ContractViolation("random_split: training count exceeds the pool");
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  CabinetSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) (i < train_count ? s.train : s.test).push_back(pool[order[i]]);
  return s;
}

// ---------------------------------------------------------------- training experiments

namespace {

struct JobSpec {
  std::string condition;
  AgentMode mode = AgentMode::kFloatingHand;
  std::uint64_t seed = 0;
  std::vector<CabinetModel> train;
  std::vector<std::vector<CabinetModel>> eval_sets;
};

struct JobOutput {
  std::vector<CurvePoint> curve;
  std::vector<EvalResult> evals;
  EvalResult robot;  // only when robot_eval and the agent is the floating hand
};

JobOutput run_job(const ExperimentConfig& cfg, const JobSpec& spec, const std::filesystem::path& out,
                  const ExperimentLog& log) {
  const TrainConfig tc = cfg.train_config(spec.mode, spec.seed);
  const TrainResult tr = train(tc, spec.train);
  const std::string tag = file_tag(spec.condition) + "_seed" + std::to_string(spec.seed);
  save_checkpoint((out / (tag + ".ckpt.json")).string(), tr.agent);
  JobOutput o;
  o.curve = tr.curve;
  const DrawerEnv env(spec.mode, tc.env);
  const PolicyFn policy = deterministic_policy(tr.agent.actor);
  for (const auto& set : spec.eval_sets) {
    o.evals.push_back(evaluate(policy, env, set, cfg.eval_episodes, 1, tc.noise, kEvalSeedBase));
  }
  if (cfg.robot_eval && spec.mode == AgentMode::kFloatingHand && !spec.eval_sets.empty()) {
    const DrawerEnv robot(AgentMode::kWholeRobot, tc.env);
    o.robot = evaluate_on_robot(policy, env, robot, spec.eval_sets.back(), cfg.eval_episodes, 1, cfg.controller,
                                tc.noise, kEvalSeedBase);
  }
  if (log) {
    std::ostringstream os;
    os << spec.condition << " seed " << spec.seed << ": success";
    for (std::size_t i = 0; i < o.evals.size(); ++i) os << (i == 0 ? " " : " / ") << o.evals[i].success_rate;
    log(os.str());
  }
  return o;
}

std::vector<JobOutput> run_specs(const ExperimentConfig& cfg, const std::vector<JobSpec>& specs,
                                 const std::filesystem::path& out, const ExperimentLog& log) {
  std::vector<std::function<JobOutput()>> jobs;
  for (const auto& s : specs) jobs.emplace_back([&cfg, &s, &out, &log] { return run_job(cfg, s, out, log); });
  return run_jobs(jobs, cfg.workers);
}

void write_curves(const std::filesystem::path& path, const std::vector<JobSpec>& specs,
                  const std::vector<JobOutput>& outs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << "condition,seed,step,return,eval_success\n";
  os << std::setprecision(10);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (const auto& p : outs[i].curve) {
      os << specs[i].condition << ',' << specs[i].seed << ',' << p.steps << ',' << p.episode_return << ','
         << p.eval_success << '\n';
    }
  }
}

MetricsReport new_report(const ExperimentConfig& cfg) {
  MetricsReport r;
  r.experiment = to_string(cfg.kind);
  r.config_hash = config_hash(cfg);
  r.code_version = code_version();
  return r;
}

// Groups consecutive specs with the same condition (specs are built
// condition-major) and summarizes eval set `which`.
void add_conditions(MetricsReport& report, const std::vector<JobSpec>& specs, const std::vector<JobOutput>& outs,
                    std::size_t which, const std::string& suffix, int episodes) {
  for (std::size_t i = 0; i < specs.size();) {
    std::size_t j = i;
    std::vector<double> succ, len;
    while (j < specs.size() && specs[j].condition == specs[i].condition) {
      const EvalResult& e = which < outs[j].evals.size() ? outs[j].evals[which] : outs[j].robot;
      succ.push_back(e.success_rate);
      len.push_back(e.avg_length);
      ++j;
    }
    report.conditions.push_back(summarize_condition(specs[i].condition + suffix, succ, len, episodes));
    i = j;
  }
}

std::filesystem::path prepare_output(const ExperimentConfig& cfg) {
  const auto out = resolve_output_dir(cfg.output_dir);
  std::filesystem::create_directories(out);
  std::ofstream(out / "config.json") << experiment_config_to_json(cfg) << '\n';
  return out;
}

MetricsReport run_curves(const ExperimentConfig& cfg, const ExperimentLog& log) {
  cfg.validate();
  const auto train_set = cabinets_for(cfg.train_cabinets, cfg.cabinet_ranges);
  assert_disjoint(train_set, cabinets_for(cfg.test_cabinets, cfg.cabinet_ranges));
  const auto out = prepare_output(cfg);
  std::vector<JobSpec> specs;
  for (AgentMode mode : cfg.modes) {
    for (std::size_t count : cfg.cabinet_counts) {
      for (std::uint64_t seed : cfg.seeds) {
        JobSpec s;
        s.condition = to_string(mode) + "/" + std::to_string(count);
        s.mode = mode;
        s.seed = seed;
        s.train.assign(train_set.begin(), train_set.begin() + static_cast<std::ptrdiff_t>(count));
        s.eval_sets = {s.train};
        specs.push_back(std::move(s));
      }
    }
  }
  const auto outs = run_specs(cfg, specs, out, log);
  write_curves(out / "curves.csv", specs, outs);
  MetricsReport report = new_report(cfg);
  add_conditions(report, specs, outs, 0, "", cfg.eval_episodes);
  if (cfg.robot_eval) {
    std::vector<JobSpec> hand_specs;
    std::vector<JobOutput> hand_outs;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (specs[i].mode != AgentMode::kFloatingHand) continue;
      hand_specs.push_back(specs[i]);
      hand_outs.push_back(outs[i]);
    }
    add_conditions(report, hand_specs, hand_outs, 1, "/robot_exec", cfg.eval_episodes);
  }
  write_report(out / "metrics.json", report);
  return report;
}

}  // namespace

MetricsReport run_learning_curves(const ExperimentConfig& cfg, const ExperimentLog& log) {
  return run_curves(cfg, log);
}

MetricsReport run_mode_comparison(const ExperimentConfig& cfg, const ExperimentLog& log) {
  ExperimentConfig c = cfg;
  c.kind = ExperimentKind::kModeComparison;
  return run_curves(c, log);
}

MetricsReport run_training_size_sweep(const ExperimentConfig& cfg, const ExperimentLog& log) {
  ExperimentConfig c = cfg;
  c.kind = ExperimentKind::kTrainingSizeSweep;
  c.validate();
  const auto train_set = cabinets_for(c.train_cabinets, c.cabinet_ranges);
  const auto test_set = cabinets_for(c.test_cabinets, c.cabinet_ranges);
  assert_disjoint(train_set, test_set);
  const auto out = prepare_output(c);
  std::vector<JobSpec> specs;
  for (std::size_t size : c.sizes) {
    for (std::uint64_t seed : c.seeds) {
      JobSpec s;
      s.condition = "size=" + std::to_string(size);
      s.seed = seed;
      s.train.assign(train_set.begin(), train_set.begin() + static_cast<std::ptrdiff_t>(size));
      s.eval_sets = {s.train, test_set};
      specs.push_back(std::move(s));
    }
  }
  const auto outs = run_specs(c, specs, out, log);
  write_curves(out / "curves.csv", specs, outs);
  {
    std::ofstream os(out / "sweep.csv");
    os << "size,seed,train_success,test_success,test_avg_length\n";
    os << std::setprecision(10);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      os << specs[i].train.size() << ',' << specs[i].seed << ',' << outs[i].evals[0].success_rate << ','
         << outs[i].evals[1].success_rate << ',' << outs[i].evals[1].avg_length << '\n';
    }
  }
  MetricsReport report = new_report(c);
  add_conditions(report, specs, outs, 1, "", c.eval_episodes);
  add_conditions(report, specs, outs, 0, "/train", c.eval_episodes);
  if (c.robot_eval) add_conditions(report, specs, outs, 2, "/robot_exec", c.eval_episodes);
  write_report(out / "metrics.json", report);
  return report;
}

MetricsReport run_random_split_ablation(const ExperimentConfig& cfg, const ExperimentLog& log) {
  ExperimentConfig c = cfg;
  c.kind = ExperimentKind::kRandomSplitAblation;
  c.validate();
  const auto pool = cabinets_for({c.train_cabinets.first, c.split_pool}, c.cabinet_ranges);
  std::vector<JobSpec> specs;
  for (std::uint64_t split_seed : c.split_seeds) {
    const CabinetSplit split = random_split(pool, c.train_cabinets.count, split_seed);
    assert_disjoint(split.train, split.test);
    for (std::uint64_t seed : c.seeds) {
      JobSpec s;
      s.condition = "split=" + std::to_string(split_seed);
      s.seed = seed;
      s.train = split.train;
      s.eval_sets = {split.train, split.test};
      specs.push_back(std::move(s));
    }
  }
  const auto out = prepare_output(c);
  const auto outs = run_specs(c, specs, out, log);
  write_curves(out / "curves.csv", specs, outs);
  MetricsReport report = new_report(c);
  add_conditions(report, specs, outs, 1, "", c.eval_episodes);
  add_conditions(report, specs, outs, 0, "/train", c.eval_episodes);
  double lo = 1.0, hi = 0.0;
  for (std::uint64_t split_seed : c.split_seeds) {
    const double m = report.at("split=" + std::to_string(split_seed)).success_mean;
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  report.values["test_success_spread"] = hi - lo;
  write_report(out / "metrics.json", report);
  return report;
}

// ---------------------------------------------------------------- singularity demo

SingularityScenario singularity_crossing_scenario(int steps, double dt) {
  SingularityScenario s{"singularity_crossing", bundled_chain("mobile_franka"), {}, {}};
  s.q0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.chain.dof()));
  s.q0[3] = 0.2;
  const double arm[7] = {0.0, 0.0, 0.0, -0.07, 0.0, 0.0, 0.785};
  for (int i = 0; i < 7; ++i) s.q0[4 + i] = arm[i];
  const Pose x0 = forward_kinematics(s.chain, s.q0);
  const double roll_rate = 0.6, descent = 0.1;
  for (int t = 0; t <= steps; ++t) {
    const double time = t * dt;
    Pose p = x0;
    p.position.z() -= descent * time;
    p.orientation = Eigen::Quaterniond(Eigen::AngleAxisd(roll_rate * time, Eigen::Vector3d::UnitX())) * x0.orientation;
    s.poses.push_back(p);
  }
  return s;
}

SingularityScenario comfortable_line_scenario(int steps) {
  SingularityScenario s{"comfortable_line", bundled_chain("mobile_franka"), {}, {}};
  s.q0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.chain.dof()));
  s.q0[3] = 0.2;
  const double arm[7] = {0.0, -0.3, 0.0, -2.2, 0.0, 1.9, 0.785};
  for (int i = 0; i < 7; ++i) s.q0[4 + i] = arm[i];
  const Pose x0 = forward_kinematics(s.chain, s.q0);
  for (int t = 0; t <= steps; ++t) s.poses.emplace_back(x0.position + Eigen::Vector3d(0.002 * t, 0.001 * t, 0.0), x0.orientation);
  return s;
}

SingularitySummary compare_tracking(const SingularityScenario& scenario, const ControllerConfig& cfg,
                                    std::ostream* series_csv) {
  const TrackingResult qp = track_trajectory(scenario.chain, scenario.q0, scenario.poses, cfg, TrackingMethod::kQp);
  const TrackingResult pinv =
      track_trajectory(scenario.chain, scenario.q0, scenario.poses, cfg, TrackingMethod::kPseudoinverse);
  SingularitySummary s;
  s.scenario = scenario.name;
  auto max_of = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); };
  s.qp_max = max_of(qp.max_abs_qdot);
  s.pinv_max = max_of(pinv.max_abs_qdot);
  s.qp_limit_hits = qp.limit_hits;
  s.pinv_limit_hits = pinv.limit_hits;
  s.qp_tracking_rms = qp.tracking_rms;
  s.pinv_tracking_rms = pinv.tracking_rms;
  if (series_csv != nullptr) {
    *series_csv << std::setprecision(10);
    for (std::size_t t = 0; t < qp.max_abs_qdot.size(); ++t) {
      *series_csv << scenario.name << ",qp," << t << ',' << qp.max_abs_qdot[t] << '\n';
    }
    for (std::size_t t = 0; t < pinv.max_abs_qdot.size(); ++t) {
      *series_csv << scenario.name << ",pseudoinverse," << t << ',' << pinv.max_abs_qdot[t] << '\n';
    }
  }
  return s;
}

MetricsReport run_singularity_demo(const ExperimentConfig& cfg, const ExperimentLog& log) {
  ExperimentConfig c = cfg;
  c.kind = ExperimentKind::kSingularityDemo;
  c.validate();
  const auto out = prepare_output(c);
  std::ofstream series(out / "singularity_series.csv");
  series << "scenario,method,step,max_abs_qdot\n";
  MetricsReport report = new_report(c);
  for (const auto& scenario :
       {singularity_crossing_scenario(60, c.controller.dt), comfortable_line_scenario(60)}) {
    const SingularitySummary s = compare_tracking(scenario, c.controller, &series);
    report.values[s.scenario + "/qp_max_abs_qdot"] = s.qp_max;
    report.values[s.scenario + "/pseudoinverse_max_abs_qdot"] = s.pinv_max;
    report.values[s.scenario + "/qp_limit_hits"] = s.qp_limit_hits;
    report.values[s.scenario + "/pseudoinverse_limit_hits"] = s.pinv_limit_hits;
    report.values[s.scenario + "/qp_tracking_rms"] = s.qp_tracking_rms;
    report.values[s.scenario + "/pseudoinverse_tracking_rms"] = s.pinv_tracking_rms;
    if (log) {
      std::ostringstream os;
      os << s.scenario << ": qp max " << s.qp_max << ", pseudoinverse max " << s.pinv_max;
      log(os.str());
    }
  }
  write_report(out / "metrics.json", report);
  return report;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, const ExperimentLog& log) {
  switch (cfg.kind) {
    case ExperimentKind::kLearningCurves:
      return run_learning_curves(cfg, log);
    case ExperimentKind::kTrainingSizeSweep:
      return run_training_size_sweep(cfg, log);
    case ExperimentKind::kModeComparison:
      return run_mode_comparison(cfg, log);
    case ExperimentKind::kSingularityDemo:
      return run_singularity_demo(cfg, log);
    case ExperimentKind::kRandomSplitAblation:
      return run_random_split_ablation(cfg, log);
  }
  throw ContractViolation("run_experiment: unknown kind");
}

}  // namespace dskill
