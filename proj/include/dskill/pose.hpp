#pragma once

#include <Eigen/Geometry>

namespace dskill {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6Xd = Eigen::Matrix<double, 6, Eigen::Dynamic>;

/// Rigid transform in the world frame: position plus unit quaternion.
///
/// The quaternion is renormalized by every constructor and by compose(), so
/// a Pose never carries a drifting rotation.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();

  Pose() = default;
  Pose(const Eigen::Vector3d& p, const Eigen::Quaterniond& q);

  static Pose Identity() { return {}; }
  static Pose Translation(const Eigen::Vector3d& p);
  static Pose Rotation(const Eigen::Vector3d& axis, double angle);

  Eigen::Matrix4d matrix() const;
  Eigen::Matrix3d rotation() const { return orientation.toRotationMatrix(); }
  Eigen::Vector3d apply(const Eigen::Vector3d& point) const {
    return position + orientation * point;
  }
};

/// Linear and angular velocity, both expressed in the world frame.
struct Twist {
  Eigen::Vector3d linear = Eigen::Vector3d::Zero();
  Eigen::Vector3d angular = Eigen::Vector3d::Zero();

  static Twist FromVector(const Vector6d& v);
  Vector6d vector() const;

  Twist operator+(const Twist& o) const { return {linear + o.linear, angular + o.angular}; }
  Twist operator*(double s) const { return {linear * s, angular * s}; }
};

/// a ∘ b: applies b first, then a.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

/// Log map of a unit quaternion as a rotation vector with angle in [0, π].
Eigen::Vector3d quaternion_log(const Eigen::Quaterniond& q);
Eigen::Quaterniond quaternion_exp(const Eigen::Vector3d& rotation_vector);

/// 6-vector [target.p - current.p ; log(target.q * current.q^-1)].
Vector6d pose_error(const Pose& current, const Pose& target);

/// Geodesic angle between two orientations, in [0, π].
double orientation_distance(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

}  // namespace dskill
