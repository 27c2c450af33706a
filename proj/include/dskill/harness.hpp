#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <thread>
#include <string>
#include <vector>

#include "dskill/controller.hpp"
#include "dskill/env.hpp"
#include "dskill/rl.hpp"

namespace dskill {

enum class ExperimentKind {
  kLearningCurves,
  kTrainingSizeSweep,
  kModeComparison,
  kSingularityDemo,
  kRandomSplitAblation,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& s);

/// Consecutive cabinet seeds [first, first + count).
struct SeedRange {
  std::uint64_t first = 0;
  std::size_t count = 0;

  std::vector<std::uint64_t> seeds() const;
  bool overlaps(const SeedRange& other) const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kLearningCurves;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  SeedRange train_cabinets{0, 15};
  SeedRange test_cabinets{15, 10};
  CabinetRanges cabinet_ranges;
  std::vector<std::size_t> sizes = {1, 5, 10, 15};
  // Random-split ablation: pool of generated cabinets and one split per seed.
  std::size_t split_pool = 25;
  std::vector<std::uint64_t> split_seeds = {0, 1, 2};
  // Learning curves and mode comparison.
  std::vector<AgentMode> modes = {AgentMode::kFloatingHand, AgentMode::kWholeRobot};
  std::vector<std::size_t> cabinet_counts = {1, 15};
  SacHyperparams sac;
  std::size_t budget = 150000;
  std::size_t warmup = 5000;
  std::size_t eval_interval = 5000;
  int curve_eval_episodes = 10;
  int eval_episodes = 100;  // per seed for reported metrics
  bool robot_eval = false;  // report robot-mode success via the whole-body controller
  ControllerConfig controller;
  double noise_sigma = 0.0;
  std::string output_dir = "runs";
  int workers = 1;

  void validate() const;
  TrainConfig train_config(AgentMode mode, std::uint64_t seed) const;
  ObservationNoise observation_noise() const;
};

/// A string "cabinet_ranges" value names a ranges file, resolved against base_dir.
ExperimentConfig load_experiment_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config_file(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// FNV-1a 64 over the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);
std::uint64_t fnv1a64(const std::string& bytes);
std::string code_version();

/// Output root: DSKILL_OUTPUT_ROOT (if set) joined with a relative dir.
std::filesystem::path resolve_output_dir(const std::string& dir);

struct ConditionMetrics {
  std::string condition;
  std::vector<double> per_seed_success;
  std::vector<double> per_seed_length;
  int episodes_per_seed = 0;
  double success_mean = 0.0;
  double success_ci95 = 0.0;  // half-width of the t interval of the mean over seeds
  double avg_length = 0.0;
};

/// Student-t 97.5% quantile for the given degrees of freedom.
double t_quantile_975(int dof);
ConditionMetrics summarize_condition(const std::string& condition, const std::vector<double>& per_seed_success,
                                     const std::vector<double>& per_seed_length, int episodes_per_seed);

struct MetricsReport {
  std::string experiment;
  std::vector<ConditionMetrics> conditions;
  std::map<std::string, double> values;  // experiment-level scalars (spreads, max speeds)
  std::string config_hash;
  std::string code_version;

  const ConditionMetrics& at(const std::string& condition) const;
  std::string to_json() const;
};

void write_report(const std::filesystem::path& path, const MetricsReport& report);

std::vector<CabinetModel> cabinets_for(const SeedRange& range, const CabinetRanges& ranges);

/// Throws ConfigError if any cabinet id appears in both sets.
void assert_disjoint(const std::vector<CabinetModel>& train, const std::vector<CabinetModel>& test);

/// 15/10-style partition of a cabinet pool, shuffled by split_seed.
struct CabinetSplit {
  std::vector<CabinetModel> train;
  std::vector<CabinetModel> test;
};
CabinetSplit random_split(const std::vector<CabinetModel>& pool, std::size_t train_count, std::uint64_t split_seed);

/// Runs jobs on up to `workers` threads; results keep job order, so merging
/// does not depend on scheduling. The first exception is rethrown.
template <typename T>
std::vector<T> run_jobs(const std::vector<std::function<T()>>& jobs, int workers) {
  std::vector<T> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  auto run_range = [&](std::size_t start, std::size_t stride) {
    for (std::size_t i = start; i < jobs.size(); i += stride) {
      try {
        results[i] = jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min<std::size_t>(std::max(workers, 1), jobs.size()));
  if (n == 1) {
    run_range(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(run_range, w, n);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

using ExperimentLog = std::function<void(const std::string&)>;

/// Trains each (mode, cabinet count, seed) and records curves and final
/// success on the training cabinets. Conditions are named "<mode>/<count>".
MetricsReport run_mode_comparison(const ExperimentConfig& cfg, const ExperimentLog& log = {});
MetricsReport run_learning_curves(const ExperimentConfig& cfg, const ExperimentLog& log = {});

/// One floating-hand policy per (size, seed) on the first `size` training
/// cabinets, evaluated on the shared test set. Conditions "size=<n>".
MetricsReport run_training_size_sweep(const ExperimentConfig& cfg, const ExperimentLog& log = {});

/// Train and test over random splits of a generated pool; conditions
/// "split=<seed>" hold test success.
MetricsReport run_random_split_ablation(const ExperimentConfig& cfg, const ExperimentLog& log = {});

struct SingularityScenario {
  std::string name;
  KinematicChain chain;
  Eigen::VectorXd q0;
  std::vector<Pose> poses;
};

/// Arm nearly straight and pointing up, then a roll about world x while
/// lowering: the roll direction is almost lost at the start.
SingularityScenario singularity_crossing_scenario(int steps = 60, double dt = 0.05);
/// Short straight line from a comfortable posture.
SingularityScenario comfortable_line_scenario(int steps = 60);

struct SingularitySummary {
  std::string scenario;
  double qp_max = 0.0;
  double pinv_max = 0.0;
  int qp_limit_hits = 0;
  int pinv_limit_hits = 0;
  double qp_tracking_rms = 0.0;
  double pinv_tracking_rms = 0.0;
};

SingularitySummary compare_tracking(const SingularityScenario& scenario, const ControllerConfig& cfg,
                                    std::ostream* series_csv = nullptr);

/// Runs both scenarios and writes singularity_series.csv; the report values
/// carry the max |qdot| and limit hits per scenario and method.
MetricsReport run_singularity_demo(const ExperimentConfig& cfg, const ExperimentLog& log = {});

/// Dispatches on cfg.kind.
MetricsReport run_experiment(const ExperimentConfig& cfg, const ExperimentLog& log = {});

}  // namespace dskill
