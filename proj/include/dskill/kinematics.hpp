#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "dskill/pose.hpp"

namespace dskill {

enum class JointKind { kRevolute, kPrismatic };

struct JointSpec {
  std::string name;
  JointKind kind = JointKind::kRevolute;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();  // in the joint's parent frame
  Pose origin;                                      // fixed offset from the previous joint frame
  double lower = 0.0;
  double upper = 0.0;
  double velocity_limit = 1.0;
};

/// Serial chain of single-axis joints ending in a fixed end-effector offset.
///
/// The first `base_joint_count` joints form the mobile base block of the
/// whole-body cost matrix; the remaining joints form the arm block.
class KinematicChain {
 public:
  KinematicChain(std::string name, std::vector<JointSpec> joints, Pose ee_offset,
                 std::size_t base_joint_count);

  const std::string& name() const { return name_; }
  const std::vector<JointSpec>& joints() const { return joints_; }
  const JointSpec& joint(std::size_t i) const { return joints_.at(i); }
  const Pose& ee_offset() const { return ee_offset_; }
  std::size_t base_joint_count() const { return base_joint_count_; }
  std::size_t dof() const { return joints_.size(); }
  static constexpr std::size_t kWorkspaceDim = 6;

  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;
  Eigen::VectorXd velocity_limits() const;

  Eigen::VectorXd clamp(const Eigen::VectorXd& q) const;
  bool within_limits(const Eigen::VectorXd& q, double slack = 0.0) const;
  Eigen::VectorXd random_configuration(std::mt19937_64& rng) const;

 private:
  std::string name_;
  std::vector<JointSpec> joints_;
  Pose ee_offset_;
  std::size_t base_joint_count_;
};

/// Joint position plus velocity for one chain.
struct Configuration {
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
};

Pose forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q);

/// World-frame geometric Jacobian; rows are [linear; angular].
Matrix6Xd jacobian(const KinematicChain& chain, const Eigen::VectorXd& q);

/// Pose and Jacobian in a single pass over the chain.
Pose forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q, Matrix6Xd* jac);

/// Parses the JSON chain description. Throws ParseError naming the joint.
KinematicChain load_chain(std::string_view description);
KinematicChain load_chain_file(const std::string& path);
std::string chain_to_json(const KinematicChain& chain);

/// Chains shipped with the library: "floating_hand" and "mobile_franka".
KinematicChain bundled_chain(std::string_view name);
std::vector<std::string> bundled_chain_names();

}  // namespace dskill
