#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dskill/kinematics.hpp"
#include "dskill/pose.hpp"

namespace dskill {

enum class AgentMode { kFloatingHand, kWholeRobot };

std::string to_string(AgentMode mode);
AgentMode agent_mode_from_string(const std::string& s);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Uniform sampling ranges for procedurally generated cabinets.
struct CabinetRanges {
  Range drawer_height{0.40, 0.80};      // world z of the drawer face center
  Range face_width{0.40, 0.60};
  Range face_height{0.16, 0.26};
  Range handle_lateral{-1.0, 1.0};      // fraction of the usable half-width of the face
  Range handle_vertical{-1.0, 1.0};     // fraction of the usable half-height of the face
  Range handle_half_width{0.03, 0.08};  // handle bar half-length
  Range full_length{0.20, 0.35};
  Range friction{0.0, 0.3};

  void validate() const;
};

CabinetRanges load_cabinet_ranges(const std::string& json_text);
CabinetRanges load_cabinet_ranges_file(const std::string& path);
std::string cabinet_ranges_to_json(const CabinetRanges& r);

/// Cabinet with a single prismatic drawer. The drawer face frame shares the
/// base orientation; the handle is a bar along the face's lateral axis.
struct CabinetModel {
  int id = 0;
  Pose base_pose;
  Eigen::Vector3d drawer_axis = Eigen::Vector3d::UnitX();  // world, pointing out of the cabinet
  Eigen::Vector3d face_center = Eigen::Vector3d::Zero();   // closed drawer, in the base frame
  double full_length = 0.3;
  Pose handle_offset;  // relative to the drawer face frame
  double handle_half_width = 0.05;
  Eigen::Vector2d face_size{0.5, 0.2};
  double friction_resistance = 0.0;

  Pose face_pose(double extension) const;
  Pose handle_pose(double extension) const;
  /// Endpoints of the handle bar in the world frame.
  std::pair<Eigen::Vector3d, Eigen::Vector3d> handle_segment(double extension) const;
  void validate() const;
};

CabinetModel sample_cabinet(std::uint64_t seed, const CabinetRanges& ranges = {});
/// Cabinets for seeds [first, first + count).
std::vector<CabinetModel> sample_cabinets(std::uint64_t first, std::size_t count, const CabinetRanges& ranges = {});

struct EnvConfig {
  double dt = 0.05;
  int max_steps = 200;
  double grasp_radius = 0.02;
  double break_radius = 0.04;
  double finger_max = 0.04;    // per-finger opening, m
  double finger_speed = 0.2;   // m/s
  double success_fraction = 0.9;
  // Reward terms.
  double stage_distance = 0.01;
  double w_distance = 1.0;
  double w_link = 2.0;
  double w_static = 1.0;
  double v_ref = 0.01;
  double stage_rewards[3] = {0.0, 2.0, 4.0};
};

struct WorldState {
  AgentMode mode = AgentMode::kFloatingHand;
  CabinetModel cabinet;
  double drawer_extension = 0.0;
  double drawer_velocity = 0.0;
  Eigen::VectorXd agent_q;
  Eigen::VectorXd agent_qdot;
  Eigen::Vector2d finger_positions = Eigen::Vector2d::Zero();
  Eigen::Vector2d finger_velocities = Eigen::Vector2d::Zero();
  Eigen::Vector2d finger_targets = Eigen::Vector2d::Zero();
  bool grasp_attached = false;
  int step_count = 0;
};

/// Normalized command; every component is clamped into [-1, 1] before use.
struct Action {
  Eigen::VectorXd joint_velocity;
  Eigen::Vector2d finger = Eigen::Vector2d::Zero();

  static Action FromVector(const Eigen::VectorXd& flat);
  Eigen::VectorXd vector() const;
};

struct StepInfo {
  bool success = false;
  double ee_handle_distance = 0.0;
  double opening = 0.0;
  bool attached = false;
};

struct StepResult {
  WorldState state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Per-block standard deviations for the object-state corruptor.
struct ObservationNoise {
  double cabinet = 0.0;
  double link = 0.0;
  double handle = 0.0;
  double size = 0.0;

  bool zero() const { return cabinet == 0.0 && link == 0.0 && handle == 0.0 && size == 0.0; }
};

/// Kinematic drawer-opening environment. Stateless apart from configuration:
/// every transition maps a WorldState to a new WorldState, so copies of a
/// state can be rolled forward independently.
class DrawerEnv {
 public:
  explicit DrawerEnv(AgentMode mode, EnvConfig cfg = {});
  DrawerEnv(AgentMode mode, KinematicChain chain, EnvConfig cfg = {});

  AgentMode mode() const { return mode_; }
  const KinematicChain& chain() const { return chain_; }
  const EnvConfig& config() const { return cfg_; }
  std::size_t action_dim() const { return chain_.dof() + 2; }
  std::size_t observation_dim() const;

  WorldState reset(const CabinetModel& cabinet, std::uint64_t seed) const;
  StepResult step(const WorldState& state, const Action& action) const;
  /// Same transition driven by raw joint velocities and finger targets (m);
  /// used by the whole-body executor, which enforces its own speed bounds.
  /// Positions are still clamped to the joint limits.
  StepResult step_joint_velocity(const WorldState& state, const Eigen::VectorXd& qdot,
                                 const Eigen::Vector2d& finger_targets) const;

  double reward(const WorldState& prev, const Action& action, const WorldState& next) const;
  bool success(const WorldState& state) const;
  double opening(const WorldState& state) const;
  double ee_handle_distance(const WorldState& state) const;
  Pose ee_pose(const WorldState& state) const;
  std::pair<Eigen::Vector3d, Eigen::Vector3d> fingertips(const WorldState& state) const;

  Eigen::VectorXd observe(const WorldState& state, const ObservationNoise& noise = {},
                          std::mt19937_64* rng = nullptr) const;

  /// Maps normalized finger commands to finger opening targets.
  Eigen::Vector2d finger_targets(const Eigen::Vector2d& command) const;

 private:
  Eigen::VectorXd move_ee_toward(Eigen::VectorXd q, const Eigen::Vector3d& target) const;
  StepResult advance(const WorldState& state, const Eigen::VectorXd& qdot, const Eigen::Vector2d& targets,
                     const Action* action) const;

  AgentMode mode_;
  KinematicChain chain_;
  EnvConfig cfg_;
};

/// Copies the cabinet and grasp bookkeeping of a floating-hand state into a
/// whole-robot state and solves IK (base free) so the robot EE matches the
/// hand. Throws SyncError when IK fails.
WorldState sync_environments(const WorldState& hand_state, const DrawerEnv& hand_env, const WorldState& robot_state,
                             const DrawerEnv& robot_env, std::uint64_t ik_seed = 0);

/// Episode trace CSV: step, q_0..q_{n-1}, ee_x, ee_y, ee_z, ee_qw, ee_qx, ee_qy, ee_qz, d, c_op, reward, done.
void write_trace_header(std::ostream& os, std::size_t dof);
void write_trace_row(std::ostream& os, const DrawerEnv& env, const WorldState& state, double reward, bool done);

}  // namespace dskill
