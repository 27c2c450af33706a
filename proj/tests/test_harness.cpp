#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "dskill/errors.hpp"
#include "dskill/harness.hpp"

namespace dskill {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dskill_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny_config(ExperimentKind kind, const fs::path& out) {
  ExperimentConfig c;
  c.kind = kind;
  c.seeds = {0, 1};
  c.train_cabinets = {0, 3};
  c.test_cabinets = {3, 2};
  c.sizes = {1, 3};
  c.split_pool = 5;
  c.cabinet_counts = {1, 3};
  c.sac.hidden = {8, 8};
  c.sac.batch_size = 16;
  c.budget = 120;
  c.warmup = 40;
  c.eval_interval = 60;
  c.curve_eval_episodes = 1;
  c.eval_episodes = 2;
  c.output_dir = out.string();
  return c;
}

TEST(ConfigTest, JsonRoundTripKeepsHash) {
  ExperimentConfig c;
  c.kind = ExperimentKind::kRandomSplitAblation;
  c.sizes = {2, 7};
  c.sac.hidden = {32, 16};
  c.controller.k = 4;
  c.noise_sigma = 0.005;
  const ExperimentConfig back = load_experiment_config(experiment_config_to_json(c));
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.sizes, c.sizes);
  EXPECT_EQ(back.sac.hidden, c.sac.hidden);
  EXPECT_EQ(back.controller.k, 4);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(ConfigTest, HashIgnoresOutputLocationOnly) {
  ExperimentConfig a, b;
  b.output_dir = "elsewhere";
  b.workers = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.budget = 1000;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(ConfigTest, Fnv1aReferenceValues) {
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(ConfigTest, ParseErrors) {
  EXPECT_THROW(load_experiment_config("{"), ParseError);
  EXPECT_THROW(load_experiment_config(R"({"experiment": "nope"})"), ParseError);
  EXPECT_THROW(load_experiment_config(R"({"budgte": 10})"), ParseError);
  EXPECT_THROW(load_experiment_config(R"({"sac": {"lr": "fast"}})"), ParseError);
  EXPECT_THROW(load_experiment_config(R"({"modes": ["tentacle"]})"), ParseError);
  EXPECT_NO_THROW(load_experiment_config("{}"));
}

TEST(ConfigTest, CabinetRangesFromFileRelativeToConfig) {
  const fs::path dir = scratch_dir("ranges");
  fs::create_directories(dir / "data");
  std::ofstream(dir / "data" / "narrow.json") << R"({"friction": [0.1, 0.1], "full_length": [0.25, 0.3]})";
  std::ofstream(dir / "exp.json") << R"({"cabinet_ranges": "data/narrow.json"})";
  const ExperimentConfig c = load_experiment_config_file((dir / "exp.json").string());
  EXPECT_EQ(c.cabinet_ranges.friction.lo, 0.1);
  EXPECT_EQ(c.cabinet_ranges.friction.hi, 0.1);
  EXPECT_EQ(c.cabinet_ranges.full_length.hi, 0.3);
  // Unspecified ranges keep their defaults.
  EXPECT_EQ(c.cabinet_ranges.drawer_height.lo, CabinetRanges{}.drawer_height.lo);
  // The hash sees the ranges themselves, not the file name.
  ExperimentConfig inline_cfg;
  inline_cfg.cabinet_ranges = c.cabinet_ranges;
  EXPECT_EQ(config_hash(c), config_hash(inline_cfg));
  std::ofstream(dir / "missing.json") << R"({"cabinet_ranges": "data/none.json"})";
  EXPECT_THROW(load_experiment_config_file((dir / "missing.json").string()), ParseError);
}

TEST(ConfigTest, Invariants) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.sizes, (std::vector<std::size_t>{1, 5, 10, 15}));

  ExperimentConfig zero = c;
  zero.sizes = {0, 5};
  EXPECT_THROW(zero.validate(), ConfigError);

  ExperimentConfig unsorted = c;
  unsorted.sizes = {5, 1};
  EXPECT_THROW(unsorted.validate(), ConfigError);

  ExperimentConfig overlap = c;
  overlap.test_cabinets = {10, 10};
  EXPECT_THROW(overlap.validate(), ConfigError);

  ExperimentConfig dup = c;
  dup.kind = ExperimentKind::kRandomSplitAblation;
  dup.split_seeds = {4, 4, 5};
  EXPECT_THROW(dup.validate(), ConfigError);

  ExperimentConfig too_big = c;
  too_big.sizes = {1, 16};
  EXPECT_THROW(too_big.validate(), ConfigError);

  ExperimentConfig one_mode = c;
  one_mode.kind = ExperimentKind::kModeComparison;
  one_mode.modes = {AgentMode::kFloatingHand};
  EXPECT_THROW(one_mode.validate(), ConfigError);
}

TEST(SeedRangeTest, Overlap) {
  EXPECT_FALSE((SeedRange{0, 15}).overlaps({15, 10}));
  EXPECT_TRUE((SeedRange{0, 16}).overlaps({15, 10}));
  EXPECT_TRUE((SeedRange{20, 1}).overlaps({15, 10}));
  EXPECT_FALSE((SeedRange{0, 0}).overlaps({0, 10}));
  EXPECT_EQ((SeedRange{3, 3}).seeds(), (std::vector<std::uint64_t>{3, 4, 5}));
}

TEST(MetricsTest, StudentQuantiles) {
  // Two-sided 95% critical values from standard t tables.
  EXPECT_NEAR(t_quantile_975(1), 12.706, 1e-3);
  EXPECT_NEAR(t_quantile_975(2), 4.303, 1e-3);
  EXPECT_NEAR(t_quantile_975(10), 2.228, 1e-3);
  EXPECT_NEAR(t_quantile_975(1000), 1.962, 1e-3);
  EXPECT_THROW(t_quantile_975(0), ContractViolation);
}

TEST(MetricsTest, ConfidenceIntervalByHand) {
  const ConditionMetrics m = summarize_condition("c", {0.6, 0.7, 0.8}, {120.0, 110.0, 100.0}, 100);
  EXPECT_NEAR(m.success_mean, 0.7, 1e-12);
  EXPECT_NEAR(m.avg_length, 110.0, 1e-12);
  // sd = 0.1, half-width = 4.3027 * 0.1 / sqrt(3)
  EXPECT_NEAR(m.success_ci95, 4.302652729911275 * 0.1 / std::sqrt(3.0), 1e-9);
  EXPECT_EQ(summarize_condition("one", {0.5}, {10.0}, 100).success_ci95, 0.0);
}

TEST(CabinetSetsTest, DisjointnessCheck) {
  const auto train = cabinets_for({0, 15}, {});
  const auto test = cabinets_for({15, 10}, {});
  EXPECT_NO_THROW(assert_disjoint(train, test));
  EXPECT_THROW(assert_disjoint(train, cabinets_for({14, 3}, {})), ConfigError);
}

TEST(CabinetSetsTest, RandomSplitPartitions) {
  const auto pool = cabinets_for({0, 25}, {});
  std::set<std::vector<int>> distinct;
  for (std::uint64_t s : {0, 1, 2}) {
    const CabinetSplit split = random_split(pool, 15, s);
    ASSERT_EQ(split.train.size(), 15u);
    ASSERT_EQ(split.test.size(), 10u);
    EXPECT_NO_THROW(assert_disjoint(split.train, split.test));
    std::set<int> all;
    std::vector<int> ids;
    for (const auto& c : split.train) {
      all.insert(c.id);
      ids.push_back(c.id);
    }
    for (const auto& c : split.test) all.insert(c.id);
    EXPECT_EQ(all.size(), 25u);
    distinct.insert(ids);
    const CabinetSplit again = random_split(pool, 15, s);
    EXPECT_EQ(again.train.front().id, split.train.front().id);
  }
  EXPECT_EQ(distinct.size(), 3u);
}

TEST(RunJobsTest, OrderIsStableAcrossWorkerCounts) {
  std::vector<std::function<int()>> jobs;
  for (int i = 0; i < 7; ++i) jobs.emplace_back([i] { return i * i; });
  EXPECT_EQ(run_jobs(jobs, 1), run_jobs(jobs, 3));
  EXPECT_EQ(run_jobs(jobs, 3)[6], 36);
  jobs.emplace_back([]() -> int { throw ConfigError("boom"); });
  EXPECT_THROW(run_jobs(jobs, 2), ConfigError);
}

TEST(OutputRootTest, EnvironmentOverride) {
  ::unsetenv("DSKILL_OUTPUT_ROOT");
  EXPECT_EQ(resolve_output_dir("runs/a"), fs::path("runs/a"));
  ::setenv("DSKILL_OUTPUT_ROOT", "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir("runs/a"), fs::path("/tmp/root/runs/a"));
  EXPECT_EQ(resolve_output_dir("/abs"), fs::path("/abs"));
  ::unsetenv("DSKILL_OUTPUT_ROOT");
}

TEST(ExperimentTest, SweepIsReproducibleAndWellFormed) {
  const fs::path a = scratch_dir("sweep_a"), b = scratch_dir("sweep_b");
  const MetricsReport ra = run_training_size_sweep(tiny_config(ExperimentKind::kTrainingSizeSweep, a));
  const MetricsReport rb = run_training_size_sweep(tiny_config(ExperimentKind::kTrainingSizeSweep, b));
  EXPECT_EQ(slurp(a / "metrics.json"), slurp(b / "metrics.json"));
  EXPECT_EQ(slurp(a / "sweep.csv"), slurp(b / "sweep.csv"));
  EXPECT_EQ(slurp(a / "curves.csv"), slurp(b / "curves.csv"));
  EXPECT_EQ(ra.config_hash, config_hash(tiny_config(ExperimentKind::kTrainingSizeSweep, a)));
  EXPECT_EQ(ra.at("size=1").per_seed_success.size(), 2u);
  EXPECT_EQ(ra.at("size=3/train").episodes_per_seed, 2);
  EXPECT_TRUE(fs::exists(a / "size_1_seed0.ckpt.json"));
  const std::string sweep = slurp(a / "sweep.csv");
  EXPECT_EQ(sweep.substr(0, sweep.find('\n')), "size,seed,train_success,test_success,test_avg_length");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 5);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(ExperimentTest, ZeroBudgetModeComparisonIsWellFormed) {
  const fs::path out = scratch_dir("modes");
  ExperimentConfig c = tiny_config(ExperimentKind::kModeComparison, out);
  c.budget = 0;
  c.seeds = {0};
  const MetricsReport r = run_mode_comparison(c);
  ASSERT_EQ(r.conditions.size(), 4u);
  for (const auto& cond : r.conditions) {
    EXPECT_EQ(cond.success_mean, 0.0);
    EXPECT_EQ(cond.avg_length, 200.0);
  }
  EXPECT_NO_THROW(r.at("whole_robot/3"));
  const std::string curves = slurp(out / "curves.csv");
  EXPECT_EQ(curves, "condition,seed,step,return,eval_success\n");
  fs::remove_all(out);
}

TEST(ExperimentTest, RandomSplitRejectsDuplicateSeeds) {
  ExperimentConfig c = tiny_config(ExperimentKind::kRandomSplitAblation, scratch_dir("dup"));
  c.split_seeds = {1, 1, 2};
  EXPECT_THROW(run_random_split_ablation(c), ConfigError);
}

TEST(ExperimentTest, SingularityDemoSummary) {
  const fs::path out = scratch_dir("sing");
  const MetricsReport r = run_singularity_demo(tiny_config(ExperimentKind::kSingularityDemo, out));
  EXPECT_LE(r.values.at("singularity_crossing/qp_max_abs_qdot"), M_PI + 1e-12);
  EXPECT_GT(r.values.at("singularity_crossing/pseudoinverse_max_abs_qdot"), M_PI);
  EXPECT_LT(r.values.at("comfortable_line/qp_max_abs_qdot"), M_PI);
  EXPECT_LT(r.values.at("comfortable_line/pseudoinverse_max_abs_qdot"), M_PI);
  const std::string series = slurp(out / "singularity_series.csv");
  EXPECT_EQ(series.substr(0, series.find('\n')), "scenario,method,step,max_abs_qdot");
  // 2 scenarios x 2 methods x 60 steps + header
  EXPECT_EQ(std::count(series.begin(), series.end(), '\n'), 241);
  fs::remove_all(out);
}

}  // namespace
}  // namespace dskill
