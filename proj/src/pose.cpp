#include "dskill/pose.hpp"

#include <cmath>

namespace dskill {

Pose::Pose(const Eigen::Vector3d& p, const Eigen::Quaterniond& q)
    : position(p), orientation(q.normalized()) {}

Pose Pose::Translation(const Eigen::Vector3d& p) { return {p, Eigen::Quaterniond::Identity()}; }

Pose Pose::Rotation(const Eigen::Vector3d& axis, double angle) {
  return {Eigen::Vector3d::Zero(), Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized()))};
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation();
  m.topRightCorner<3, 1>() = position;
  return m;
}

Twist Twist::FromVector(const Vector6d& v) { return {v.head<3>(), v.tail<3>()}; }

Vector6d Twist::vector() const {
  Vector6d v;
  v << linear, angular;
  return v;
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.position + a.orientation * b.position, a.orientation * b.orientation};
}

Pose inverse(const Pose& p) {
  const Eigen::Quaterniond qi = p.orientation.conjugate();
  return {-(qi * p.position), qi};
}

Eigen::Vector3d quaternion_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  // q and -q are the same rotation; pick the representative with w >= 0 so
  // the angle lands in [0, π].
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Eigen::Vector3d v = q.vec();
  const double n = v.norm();
  if (n < 1e-12) return 2.0 * v / q.w();
  const double angle = 2.0 * std::atan2(n, q.w());
  return v * (angle / n);
}

Eigen::Quaterniond quaternion_exp(const Eigen::Vector3d& rv) {
  const double angle = rv.norm();
  if (angle < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * rv.x(), 0.5 * rv.y(), 0.5 * rv.z());
    return q.normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, rv / angle));
}

Vector6d pose_error(const Pose& current, const Pose& target) {
  Vector6d e;
  e.head<3>() = target.position - current.position;
  e.tail<3>() = quaternion_log(target.orientation * current.orientation.conjugate());
  return e;
}

double orientation_distance(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return quaternion_log(b * a.conjugate()).norm();
}

}  // namespace dskill
