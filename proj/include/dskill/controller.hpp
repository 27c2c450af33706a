#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dskill/env.hpp"
#include "dskill/ik.hpp"
#include "dskill/kinematics.hpp"
#include "dskill/pose.hpp"
#include "dskill/qp.hpp"
#include "dskill/rl.hpp"

namespace dskill {

struct ControllerConfig {
  int k = 10;
  double omega1 = 20.0;
  double omega2 = 0.1;
  double dt = 0.05;
  /// Per-joint speed bound; empty means pi for every joint.
  Eigen::VectorXd qdot_max;
  /// Also shrink the box so one step cannot cross a joint position limit.
  bool respect_position_limits = true;
  double relaxed_penalty = 1e6;
  IkOptions ik = [] {
    IkOptions o;
    o.lock_base = true;
    return o;
  }();

  void validate(std::size_t dof) const;
  Eigen::VectorXd velocity_bounds(std::size_t dof) const;
};

struct ControlStepTrace {
  Vector6d desired_twist = Vector6d::Zero();
  int z_res = 0;
  double c_base = 0.0;
  double c_arm = 0.0;
  QpStatus qp_status = QpStatus::kOptimal;
  bool relaxed = false;  // the exact QP was infeasible and the penalty form was used
  Eigen::VectorXd qdot_d;
  Pose probe_target;
};

Vector6d desired_ee_velocity(const Pose& x_ee, const Pose& x_h_next, double dt);

/// Rolls a copy of the floating-hand state forward k policy steps and returns
/// the resulting hand pose. Stops early if the episode ends.
Pose rollout_reference(const DrawerEnv& hand_env, const PolicyFn& policy, const WorldState& hand_state, int k);

/// diag(c_base I_base, c_arm I_arm), c_base = w1 z + w2 (1 - z), c_arm = w1 (1 - z) + w2 z.
Eigen::MatrixXd build_cost_matrix(int z_res, const ControllerConfig& cfg, const KinematicChain& chain);

/// Base-locked IK toward the probe target; returns its z_res.
int reachability_probe(const KinematicChain& chain, const Eigen::VectorXd& q_t, const Pose& probe_target,
                       const ControllerConfig& cfg);

/// One whole-body control step. Throws ControllerError if even the relaxed QP fails.
ControlStepTrace control_step(const KinematicChain& chain, const Eigen::VectorXd& q_t, const Pose& x_h_next,
                              const Pose& probe_target, const ControllerConfig& cfg);

/// Unweighted minimum-norm solution J^+ xdot (SVD), no bounds.
Eigen::VectorXd pseudoinverse_velocity(const KinematicChain& chain, const Eigen::VectorXd& q, const Vector6d& twist);

/// A floating-hand episode: states[0] is the reset state, states[t + 1] the
/// state after step t.
struct HandEpisode {
  std::vector<WorldState> states;
  bool success = false;
};

HandEpisode run_hand_episode(const DrawerEnv& hand_env, const PolicyFn& policy, const WorldState& initial,
                             const ObservationNoise& noise = {}, std::mt19937_64* rng = nullptr);

struct RobotEpisode {
  std::vector<ControlStepTrace> steps;
  std::vector<WorldState> states;  // robot states, states[0] is the start
  bool success = false;
  int length = 0;
  double tracking_rms = 0.0;  // RMS EE position error against the hand trajectory (m)
  double max_qdot = 0.0;
  int relaxed_steps = 0;
  bool controller_failed = false;
  std::string failure;
};

/// Tracks the hand episode with the whole-body controller. The robot starts
/// from robot_initial (already synchronized with the hand start). When policy
/// is null the probe target is the recorded hand pose k steps ahead.
RobotEpisode execute_on_robot(const DrawerEnv& robot_env, const WorldState& robot_initial, const DrawerEnv& hand_env,
                              const HandEpisode& hand, const PolicyFn* policy, const ControllerConfig& cfg);

/// Robot-mode evaluation: each episode runs the policy on the floating hand,
/// synchronizes a freshly reset robot to the hand start and executes the
/// trajectory. Seeding matches evaluate().
EvalResult evaluate_on_robot(const PolicyFn& policy, const DrawerEnv& hand_env, const DrawerEnv& robot_env,
                             const std::vector<CabinetModel>& cabinets, int episodes_per_seed, int seeds,
                             const ControllerConfig& cfg, const ObservationNoise& noise = {},
                             std::uint64_t seed_base = 0);

enum class TrackingMethod { kQp, kPseudoinverse };

struct TrackingResult {
  std::vector<double> max_abs_qdot;  // per step, before any clamping
  std::vector<Eigen::VectorXd> q;    // q[0] is the start
  std::vector<ControlStepTrace> traces;  // QP method only
  double tracking_rms = 0.0;
  int limit_hits = 0;  // steps where some joint reached (QP) or exceeded (pseudoinverse) its bound
};

/// Follows a scripted EE pose sequence from q0 without an environment.
/// poses[0] is the start pose; step t tracks poses[t + 1]. The QP method
/// probes poses[t + k]; the pseudoinverse baseline integrates J^+ xdot clamped
/// to the same bounds after recording the unclamped speed.
TrackingResult track_trajectory(const KinematicChain& chain, const Eigen::VectorXd& q0, const std::vector<Pose>& poses,
                                const ControllerConfig& cfg, TrackingMethod method);

void write_control_trace_header(std::ostream& os, std::size_t dof);
void write_control_trace_row(std::ostream& os, int step, const ControlStepTrace& trace);

}  // namespace dskill
