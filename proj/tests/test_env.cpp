#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "dskill/env.hpp"
#include "dskill/errors.hpp"

namespace dskill {
namespace {

// Builds a state whose hand TCP sits exactly on the handle centre.
WorldState hand_at_handle(const DrawerEnv& env, const CabinetModel& cab, double extension) {
  WorldState s = env.reset(cab, 0);
  s.drawer_extension = extension;
  const Eigen::Vector3d h = cab.handle_pose(extension).position;
  s.agent_q.head<3>() = h;
  s.agent_q.tail<3>().setZero();
  return s;
}

Action zero_action(const DrawerEnv& env) {
  Action a;
  a.joint_velocity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(env.chain().dof()));
  return a;
}

TEST(CabinetTest, SameSeedSameCabinet) {
  const CabinetModel a = sample_cabinet(7, {});
  const CabinetModel b = sample_cabinet(7, {});
  EXPECT_EQ(a.full_length, b.full_length);
  EXPECT_EQ(a.friction_resistance, b.friction_resistance);
  EXPECT_TRUE(a.handle_offset.position == b.handle_offset.position);
  EXPECT_TRUE(a.face_center == b.face_center);
}

TEST(CabinetTest, TrainAndTestSplitsAreDisjoint) {
  const auto train = sample_cabinets(0, 15, {});
  const auto test = sample_cabinets(15, 10, {});
  ASSERT_EQ(train.size(), 15u);
  ASSERT_EQ(test.size(), 10u);
  std::set<std::pair<double, double>> keys;
  for (const auto& c : train) keys.insert({c.full_length, c.face_center.z()});
  for (const auto& c : test) EXPECT_EQ(keys.count({c.full_length, c.face_center.z()}), 0u);
  EXPECT_EQ(keys.size(), 15u);
}

TEST(CabinetTest, CollapsedRangesFixParameters) {
  CabinetRanges r;
  r.drawer_height = {0.5, 0.5};
  r.face_width = {0.5, 0.5};
  r.face_height = {0.2, 0.2};
  r.handle_lateral = {0.0, 0.0};
  r.handle_vertical = {0.0, 0.0};
  r.handle_half_width = {0.05, 0.05};
  r.full_length = {0.3, 0.3};
  r.friction = {0.1, 0.1};
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const CabinetModel c = sample_cabinet(seed, r);
    EXPECT_EQ(c.full_length, 0.3);
    EXPECT_EQ(c.friction_resistance, 0.1);
    EXPECT_EQ(c.face_center.z(), 0.5);
    EXPECT_EQ(c.handle_half_width, 0.05);
    EXPECT_NEAR(c.handle_offset.position.y(), 0.0, 0.0);
  }
}

TEST(CabinetTest, RangesRoundTripAndValidate) {
  CabinetRanges r;
  r.full_length = {0.25, 0.3};
  const CabinetRanges back = load_cabinet_ranges(cabinet_ranges_to_json(r));
  EXPECT_EQ(back.full_length.lo, 0.25);
  EXPECT_EQ(back.full_length.hi, 0.3);
  EXPECT_THROW(load_cabinet_ranges(R"({"full_length": [0.4, 0.2]})"), ParseError);
  EXPECT_THROW(load_cabinet_ranges(R"({"friction": [0.1]})"), ParseError);
  EXPECT_THROW(load_cabinet_ranges("{"), ParseError);
}

TEST(ResetTest, DeterministicAndClosed) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(3, {});
  const WorldState a = env.reset(cab, 11);
  const WorldState b = env.reset(cab, 11);
  EXPECT_TRUE(a.agent_q == b.agent_q);
  EXPECT_EQ(a.drawer_extension, 0.0);
  EXPECT_EQ(a.step_count, 0);
  EXPECT_FALSE(a.grasp_attached);
}

TEST(ResetTest, StartDistanceBand) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(0, {});
  // Oracle: the start region box is x in [0.35, 0.6], y in [-0.3, 0.3], z in [0.35, 0.85];
  // the handle tip sits at x = 0.04, so d is bounded by box-to-segment distances.
  const auto [a, b] = cab.handle_segment(0.0);
  const double lo = 0.35 - 0.04;
  const double hi = std::sqrt(std::pow(0.6 - 0.04, 2) + std::pow(0.3 + std::max(std::abs(a.y()), std::abs(b.y())), 2) +
                              std::pow(std::max(0.85 - a.z(), a.z() - 0.35), 2));
  double dmin = 1e9, dmax = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double d = env.ee_handle_distance(env.reset(cab, seed));
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  EXPECT_GE(dmin, lo - 1e-12);
  EXPECT_LE(dmax, hi + 1e-12);
  EXPECT_GT(dmax - dmin, 0.1);
}

TEST(ResetTest, RobotModeHasElevenJoints) {
  const DrawerEnv env(AgentMode::kWholeRobot);
  const WorldState s = env.reset(sample_cabinet(0, {}), 0);
  EXPECT_EQ(s.agent_q.size(), 11);
  EXPECT_EQ(env.action_dim(), 13u);
  EXPECT_EQ(env.observation_dim(), 37u + 22u + 12u);
  EXPECT_EQ(DrawerEnv(AgentMode::kFloatingHand).observation_dim(), 37u + 12u + 12u);
}

TEST(StepTest, ZeroActionOnlyAdvancesStepCount) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const WorldState s = env.reset(sample_cabinet(1, {}), 5);
  const StepResult r = env.step(s, zero_action(env));
  EXPECT_TRUE(r.state.agent_q == s.agent_q);
  EXPECT_TRUE(r.state.finger_positions == s.finger_positions);
  EXPECT_EQ(r.state.drawer_extension, s.drawer_extension);
  EXPECT_EQ(r.state.grasp_attached, s.grasp_attached);
  EXPECT_EQ(r.state.step_count, 1);
  EXPECT_FALSE(r.done);
}

TEST(StepTest, ActionsAreClampedNotRejected) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const WorldState s = env.reset(sample_cabinet(1, {}), 5);
  Action big = zero_action(env);
  big.joint_velocity[0] = 5.0;
  Action unit = zero_action(env);
  unit.joint_velocity[0] = 1.0;
  EXPECT_TRUE(env.step(s, big).state.agent_q == env.step(s, unit).state.agent_q);
  EXPECT_NEAR(env.step(s, unit).state.agent_q[0] - s.agent_q[0], env.chain().velocity_limits()[0] * env.config().dt, 1e-15);
  Action wrong;
  wrong.joint_velocity = Eigen::VectorXd::Zero(11);
  EXPECT_THROW(env.step(s, wrong), ContractViolation);
}

TEST(StepTest, AttachedPullFollowsProjection) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  CabinetRanges r;
  r.friction = {0.0, 0.0};
  const CabinetModel cab = sample_cabinet(2, r);
  WorldState s = hand_at_handle(env, cab, 0.05);
  s.grasp_attached = true;
  s.finger_positions.setZero();
  Action a = zero_action(env);
  a.finger << -1.0, -1.0;
  // 0.1 m along +x over two steps at the 0.5 m/s hand limit with dt 0.05 would be
  // 0.025 m per step; use a 0.1 m step by scaling dt through step_joint_velocity.
  Eigen::VectorXd qdot = Eigen::VectorXd::Zero(6);
  qdot[0] = 0.5;
  double ext = s.drawer_extension;
  for (int i = 0; i < 4; ++i) {
    const StepResult res = env.step_joint_velocity(s, qdot, Eigen::Vector2d::Zero());
    ASSERT_TRUE(res.state.grasp_attached);
    s = res.state;
  }
  // Oracle: displacement 4 * 0.5 * dt = 0.1 m dotted with the +x axis.
  EXPECT_NEAR(s.drawer_extension - ext, 0.1, 1e-12);
  EXPECT_NEAR(env.ee_handle_distance(s), 0.0, 1e-9);
}

TEST(StepTest, FrictionScalesMotionAndEeStaysOnHandle) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  CabinetRanges r;
  r.friction = {0.25, 0.25};
  const CabinetModel cab = sample_cabinet(2, r);
  WorldState s = hand_at_handle(env, cab, 0.0);
  s.grasp_attached = true;
  s.finger_positions.setZero();
  Eigen::VectorXd qdot = Eigen::VectorXd::Zero(6);
  qdot[0] = 0.4;
  const StepResult res = env.step_joint_velocity(s, qdot, Eigen::Vector2d::Zero());
  EXPECT_NEAR(res.state.drawer_extension, 0.75 * 0.4 * env.config().dt, 1e-12);
  EXPECT_NEAR(env.ee_handle_distance(res.state), 0.0, 1e-9);
}

TEST(StepTest, AttachedHoldKeepsTcpOnBar) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  CabinetRanges r;
  r.friction = {0.0, 0.0};
  const CabinetModel cab = sample_cabinet(3, r);
  WorldState s = hand_at_handle(env, cab, 0.0);
  s.grasp_attached = true;
  s.finger_positions.setZero();
  // Pull along +x while drifting vertically; the grasp absorbs the drift.
  Eigen::VectorXd qdot = Eigen::VectorXd::Zero(6);
  qdot[0] = 0.2;
  qdot[2] = 0.3;
  for (int i = 0; i < 5; ++i) {
    s = env.step_joint_velocity(s, qdot, Eigen::Vector2d::Zero()).state;
    ASSERT_TRUE(s.grasp_attached);
    EXPECT_NEAR(env.ee_handle_distance(s), 0.0, 1e-9);
  }
  EXPECT_NEAR(s.drawer_extension, 5 * 0.2 * env.config().dt, 1e-12);
}

TEST(StepTest, YankOffTheBarBreaksGrasp) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(3, {});
  WorldState s = hand_at_handle(env, cab, 0.05);
  s.grasp_attached = true;
  s.finger_positions.setZero();
  // 1 m/s vertically for one step lands 5 cm off the bar, past the break radius.
  Eigen::VectorXd qdot = Eigen::VectorXd::Zero(6);
  qdot[0] = 0.2;
  qdot[2] = 1.0;
  const StepResult res = env.step_joint_velocity(s, qdot, Eigen::Vector2d::Zero());
  EXPECT_FALSE(res.state.grasp_attached);
  EXPECT_EQ(res.state.drawer_extension, 0.05);
  EXPECT_NEAR(res.state.agent_q[2], s.agent_q[2] + env.config().dt, 1e-12);
}

TEST(StepTest, AttachSnapsTcpOntoHandle) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(6, {});
  WorldState s = hand_at_handle(env, cab, 0.0);
  s.agent_q[0] += 0.01;  // 1 cm out along the drawer axis
  Action close = zero_action(env);
  close.finger << -1.0, -1.0;
  const StepResult r = env.step(s, close);
  ASSERT_TRUE(r.state.grasp_attached);
  EXPECT_NEAR(env.ee_handle_distance(r.state), 0.0, 1e-9);
}

TEST(StepTest, MonotonePullNeverDecreasesExtension) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(4, {});
  WorldState s = hand_at_handle(env, cab, 0.0);
  s.grasp_attached = true;
  s.finger_positions.setZero();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> speed(0.01, 0.5), lateral(-0.05, 0.05);
  double prev = 0.0;
  for (int i = 0; i < 60; ++i) {
    Eigen::VectorXd qdot = Eigen::VectorXd::Zero(6);
    qdot[0] = speed(rng);
    qdot[1] = lateral(rng);
    s = env.step_joint_velocity(s, qdot, Eigen::Vector2d::Zero()).state;
    EXPECT_GE(s.drawer_extension, prev);
    EXPECT_LE(s.drawer_extension, cab.full_length);
    prev = s.drawer_extension;
  }
}

TEST(StepTest, DetachedDrawerDoesNotMove) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(4, {});
  WorldState s = env.reset(cab, 2);
  s.drawer_extension = 0.1;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Action a = zero_action(env);
    for (Eigen::Index j = 0; j < 6; ++j) a.joint_velocity[j] = u(rng);
    a.finger << 1.0, 1.0;  // open fingers never attach
    s = env.step(s, a).state;
    EXPECT_EQ(s.drawer_extension, 0.1);
    EXPECT_FALSE(s.grasp_attached);
  }
}

TEST(StepTest, GraspAttachAndDetach) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(6, {});
  WorldState s = hand_at_handle(env, cab, 0.0);
  Action close = zero_action(env);
  close.finger << -1.0, -1.0;
  // Half-open fingers (2 cm) are at the grasp radius; one closing step brings both
  // tips within it.
  StepResult r = env.step(s, close);
  EXPECT_TRUE(r.state.grasp_attached);
  Action open = zero_action(env);
  open.finger << 1.0, 1.0;
  EXPECT_FALSE(env.step(r.state, open).state.grasp_attached);

  // Lateral offset beyond the break radius drops the grasp.
  WorldState far = r.state;
  far.agent_q[2] += 0.05;
  EXPECT_FALSE(env.step(far, close).state.grasp_attached);
  // A hand 10 cm away never attaches.
  WorldState away = s;
  away.agent_q[0] += 0.1;
  EXPECT_FALSE(env.step(away, close).state.grasp_attached);
}

TEST(StepTest, TimeLimitEndsEpisode) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  WorldState s = env.reset(sample_cabinet(0, {}), 0);
  StepResult r;
  for (int i = 0; i < 200; ++i) {
    r = env.step(s, zero_action(env));
    s = r.state;
    if (i < 199) {
      EXPECT_FALSE(r.done);
    }
  }
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.info.success);
  EXPECT_EQ(s.step_count, 200);
}

TEST(RewardTest, StagedValues) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(0, {});
  const Action a = zero_action(env);

  WorldState far = hand_at_handle(env, cab, 0.0);
  far.agent_q[0] += 0.5;
  EXPECT_NEAR(env.reward(far, a, far), -0.5, 1e-12);

  WorldState half = hand_at_handle(env, cab, 0.5 * cab.full_length);
  half.agent_q[0] += 0.005;
  EXPECT_NEAR(env.reward(half, a, half), 2.0 - 0.005 + 1.0, 1e-12);

  WorldState open = hand_at_handle(env, cab, 0.95 * cab.full_length);
  open.agent_q[0] += 0.005;
  open.drawer_velocity = 0.0;
  EXPECT_NEAR(env.reward(open, a, open), 4.0 - 0.005 + 1.9 + 1.0, 1e-12);

  open.drawer_velocity = 0.01;
  EXPECT_NEAR(env.reward(open, a, open), 4.0 - 0.005 + 1.9 + std::exp(-1.0), 1e-12);
}

TEST(RewardTest, StageMonotonicity) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(0, {});
  const Action a = zero_action(env);
  double prev = -1e9;
  for (int i = 0; i <= 100; ++i) {
    WorldState s = hand_at_handle(env, cab, cab.full_length * i / 100.0);
    s.agent_q[0] += 0.004;
    const double r = env.reward(s, a, s);
    EXPECT_GE(r, prev);
    prev = r;
  }
  for (double c : {0.2, 0.95}) {
    double last = 1e9;
    for (int i = 0; i < 10; ++i) {
      WorldState s = hand_at_handle(env, cab, c * cab.full_length);
      s.agent_q[0] += 0.001 * i;
      const double r = env.reward(s, a, s);
      EXPECT_LE(r, last);
      last = r;
    }
  }
}

TEST(SuccessTest, Threshold) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(0, {});
  WorldState s = env.reset(cab, 0);
  s.drawer_extension = 0.95 * cab.full_length;
  EXPECT_TRUE(env.success(s));
  s.drawer_extension = 0.5 * cab.full_length;
  EXPECT_FALSE(env.success(s));
  s.drawer_extension = 0.9 * cab.full_length;
  EXPECT_TRUE(env.success(s));
}

TEST(ObserveTest, NoiselessLayout) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const CabinetModel cab = sample_cabinet(8, {});
  const WorldState s = env.reset(cab, 1);
  const Eigen::VectorXd v = env.observe(s);
  ASSERT_EQ(static_cast<std::size_t>(v.size()), env.observation_dim());
  EXPECT_TRUE(v == env.observe(s));
  // Closed drawer: current face pose is the closed pose; full pose shifted by full_length along the axis.
  const Eigen::Vector3d closed = cab.base_pose.apply(cab.face_center);
  EXPECT_TRUE(v.segment<3>(7).isApprox(closed, 1e-15));
  EXPECT_TRUE(v.segment<3>(14).isApprox(closed + cab.full_length * cab.drawer_axis, 1e-15));
  EXPECT_TRUE(v.segment<3>(28).isApprox(cab.handle_pose(cab.full_length).position, 1e-15));
  EXPECT_EQ(v[35], cab.full_length);
  EXPECT_EQ(v[36], 0.0);
  for (Eigen::Index k : {3, 10, 17, 24, 31}) EXPECT_NEAR(v.segment<4>(k).norm(), 1.0, 1e-12);
  EXPECT_TRUE(v.segment(37, 6) == s.agent_q);
}

TEST(ObserveTest, HandleNoiseIsHalfNormal) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const WorldState s = env.reset(sample_cabinet(8, {}), 1);
  const Eigen::VectorXd clean = env.observe(s);
  ObservationNoise noise;
  noise.handle = 0.005;
  std::mt19937_64 rng(42);
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd v = env.observe(s, noise, &rng);
    sum += std::abs(v[21] - clean[21]);
    EXPECT_TRUE(v.head(21) == clean.head(21));
    EXPECT_TRUE(v.tail(v.size() - 35) == clean.tail(clean.size() - 35));
  }
  // Oracle: E|N(0, s)| = s * sqrt(2 / pi).
  EXPECT_NEAR(sum / n, 0.005 * std::sqrt(2.0 / M_PI), 1e-4);
}

TEST(SyncTest, FreshResetsAndHalfOpenDrawer) {
  const DrawerEnv hand(AgentMode::kFloatingHand);
  const DrawerEnv robot(AgentMode::kWholeRobot);
  const CabinetModel cab = sample_cabinet(9, {});
  const WorldState hs = hand.reset(cab, 4);
  const WorldState rs = robot.reset(cab, 4);
  const WorldState synced = sync_environments(hs, hand, rs, robot);
  EXPECT_EQ(synced.drawer_extension, 0.0);

  WorldState half = hand_at_handle(hand, cab, 0.5 * cab.full_length);
  half.grasp_attached = true;
  const WorldState rsync = sync_environments(half, hand, rs, robot);
  EXPECT_EQ(rsync.drawer_extension, half.drawer_extension);
  EXPECT_TRUE(rsync.grasp_attached);
  const Pose want = hand.ee_pose(half);
  const Pose got = robot.ee_pose(rsync);
  EXPECT_LT((want.position - got.position).norm(), 1e-4);
  EXPECT_LT(orientation_distance(want.orientation, got.orientation), 1e-3);
}

TEST(SyncTest, UnreachableHandPoseThrows) {
  const DrawerEnv hand(AgentMode::kFloatingHand);
  const DrawerEnv robot(AgentMode::kWholeRobot);
  const CabinetModel cab = sample_cabinet(9, {});
  WorldState hs = hand.reset(cab, 4);
  hs.agent_q[2] = -10.0;
  const WorldState rs = robot.reset(cab, 4);
  EXPECT_THROW(sync_environments(hs, hand, rs, robot), SyncError);
}

TEST(TraceTest, CsvColumns) {
  const DrawerEnv env(AgentMode::kFloatingHand);
  const WorldState s = env.reset(sample_cabinet(0, {}), 0);
  std::ostringstream os;
  write_trace_header(os, 6);
  write_trace_row(os, env, s, -0.5, false);
  std::string header, row;
  std::istringstream is(os.str());
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "step,q_0,q_1,q_2,q_3,q_4,q_5,ee_x,ee_y,ee_z,ee_qw,ee_qx,ee_qy,ee_qz,d,c_op,reward,done");
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
}

}  // namespace
}  // namespace dskill
