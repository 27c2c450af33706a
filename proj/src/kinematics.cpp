#include "dskill/kinematics.hpp"

#include <cmath>
#include <sstream>

#include "dskill/errors.hpp"

namespace dskill {

namespace {

std::string joint_label(const JointSpec& j, std::size_t i) {
  std::ostringstream os;
  os << "joint " << i;
  if (!j.name.empty()) os << " ('" << j.name << "')";
  return os.str();
}

void check_dimension(const KinematicChain& chain, const Eigen::VectorXd& q) {
  if (static_cast<std::size_t>(q.size()) != chain.dof()) {
    std::ostringstream os;
    os << "chain '" << chain.name() << "' expects " << chain.dof() << " joint values, got " << q.size();
    throw ContractViolation(os.str());
  }
}

}  // namespace

KinematicChain::KinematicChain(std::string name, std::vector<JointSpec> joints, Pose ee_offset,
                               std::size_t base_joint_count)
    : name_(std::move(name)),
      joints_(std::move(joints)),
      ee_offset_(std::move(ee_offset)),
      base_joint_count_(base_joint_count) {
  if (joints_.empty()) throw ContractViolation("chain '" + name_ + "' has no joints");
  if (base_joint_count_ < 1 || base_joint_count_ >= joints_.size()) {
    throw ContractViolation("chain '" + name_ + "': base_joint_count must be in [1, dof)");
  }
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const JointSpec& j = joints_[i];
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw ContractViolation(joint_label(j, i) + ": non-unit axis");
    }
    if (!(j.lower <= j.upper)) throw ContractViolation(joint_label(j, i) + ": lower limit exceeds upper");
    if (!(j.velocity_limit > 0.0)) throw ContractViolation(joint_label(j, i) + ": velocity limit must be > 0");
  }
}

Eigen::VectorXd KinematicChain::lower_limits() const {
  Eigen::VectorXd v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints_[i].lower;
  return v;
}

Eigen::VectorXd KinematicChain::upper_limits() const {
  Eigen::VectorXd v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints_[i].upper;
  return v;
}

Eigen::VectorXd KinematicChain::velocity_limits() const {
  Eigen::VectorXd v(dof());
  for (std::size_t i = 0; i < dof(); ++i) v[i] = joints_[i].velocity_limit;
  return v;
}

Eigen::VectorXd KinematicChain::clamp(const Eigen::VectorXd& q) const {
  check_dimension(*this, q);
  return q.cwiseMax(lower_limits()).cwiseMin(upper_limits());
}

bool KinematicChain::within_limits(const Eigen::VectorXd& q, double slack) const {
  check_dimension(*this, q);
  for (std::size_t i = 0; i < dof(); ++i) {
    if (q[i] < joints_[i].lower - slack || q[i] > joints_[i].upper + slack) return false;
  }
  return true;
}

Eigen::VectorXd KinematicChain::random_configuration(std::mt19937_64& rng) const {
  Eigen::VectorXd q(dof());
  for (std::size_t i = 0; i < dof(); ++i) {
    std::uniform_real_distribution<double> u(joints_[i].lower, joints_[i].upper);
    q[i] = u(rng);
  }
  return q;
}

Pose forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q, Matrix6Xd* jac) {
  check_dimension(chain, q);
  const std::size_t n = chain.dof();

  // World-frame joint axes and anchor points, collected on the way out.
  std::vector<Eigen::Vector3d> axes(n), anchors(n);
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Quaterniond r = Eigen::Quaterniond::Identity();
  for (std::size_t i = 0; i < n; ++i) {
    const JointSpec& j = chain.joint(i);
    p += r * j.origin.position;
    r = r * j.origin.orientation;
    axes[i] = r * j.axis;
    anchors[i] = p;
    if (j.kind == JointKind::kRevolute) {
      r = r * Eigen::Quaterniond(Eigen::AngleAxisd(q[i], j.axis));
    } else {
      p += axes[i] * q[i];
    }
  }
  p += r * chain.ee_offset().position;
  r = r * chain.ee_offset().orientation;
  Pose ee(p, r);

  if (jac != nullptr) {
    jac->resize(6, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      if (chain.joint(i).kind == JointKind::kRevolute) {
        jac->block<3, 1>(0, c) = axes[i].cross(ee.position - anchors[i]);
        jac->block<3, 1>(3, c) = axes[i];
      } else {
        jac->block<3, 1>(0, c) = axes[i];
        jac->block<3, 1>(3, c).setZero();
      }
    }
  }
  return ee;
}

Pose forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q) {
  return forward_kinematics(chain, q, nullptr);
}

Matrix6Xd jacobian(const KinematicChain& chain, const Eigen::VectorXd& q) {
  Matrix6Xd j;
  forward_kinematics(chain, q, &j);
  return j;
}

}  // namespace dskill
