#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dskill/errors.hpp"
#include "dskill/kinematics.hpp"
#include "oracles.hpp"

namespace dskill {
namespace {

using Eigen::Vector3d;

KinematicChain planar_2r() {
  JointSpec j1{"j1", JointKind::kRevolute, Vector3d::UnitZ(), Pose::Identity(), -M_PI, M_PI, 1.0};
  JointSpec j2{"j2", JointKind::kRevolute, Vector3d::UnitZ(), Pose::Translation({1, 0, 0}), -M_PI, M_PI, 1.0};
  return KinematicChain("planar_2r", {j1, j2}, Pose::Translation({1, 0, 0}), 1);
}

KinematicChain single_prismatic_z() {
  JointSpec j{"slide", JointKind::kPrismatic, Vector3d::UnitZ(), Pose::Identity(), -1.0, 1.0, 1.0};
  JointSpec tail{"tail", JointKind::kRevolute, Vector3d::UnitZ(), Pose::Identity(), -1.0, 1.0, 1.0};
  return KinematicChain("slide", {j, tail}, Pose::Identity(), 1);
}

double quat_distance(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return std::min((a.coeffs() - b.coeffs()).norm(), (a.coeffs() + b.coeffs()).norm());
}

TEST(PoseTest, ComposeIdentity) {
  const Pose p = compose(Pose::Identity(), Pose::Identity());
  EXPECT_LT(p.position.norm(), 1e-15);
  EXPECT_LT(quat_distance(p.orientation, Eigen::Quaterniond::Identity()), 1e-15);
}

TEST(PoseTest, ComposeTranslations) {
  const Pose p = compose(Pose::Translation({1, 0, 0}), Pose::Translation({0, 2, 0}));
  EXPECT_LT((p.position - Vector3d(1, 2, 0)).norm(), 1e-15);
}

TEST(PoseTest, ComposeRotationThenTranslationMatchesMatrixProduct) {
  const Pose a = Pose::Rotation(Vector3d::UnitZ(), M_PI / 2);
  const Pose b = Pose::Translation({1, 0, 0});
  const Pose c = compose(a, b);
  EXPECT_LT((c.position - Vector3d(0, 1, 0)).norm(), 1e-12);
  EXPECT_LT(quat_distance(c.orientation, a.orientation), 1e-12);
  const Eigen::Matrix4d m = a.matrix() * b.matrix();
  EXPECT_LT((m - c.matrix()).norm(), 1e-12);
}

TEST(PoseTest, ComposeWithInverseIsIdentityAndAssociative) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2);
  auto random_pose = [&] {
    return Pose(Vector3d(u(rng), u(rng), u(rng)),
                Eigen::Quaterniond(Eigen::AngleAxisd(u(rng) * 1.5, testing::random_unit(rng))));
  };
  for (int k = 0; k < 1000; ++k) {
    const Pose a = random_pose(), b = random_pose(), c = random_pose();
    const Pose id = compose(a, inverse(a));
    EXPECT_LT(id.position.norm(), 1e-9);
    EXPECT_LT(quat_distance(id.orientation, Eigen::Quaterniond::Identity()), 1e-9);
    const Pose l = compose(compose(a, b), c), r = compose(a, compose(b, c));
    EXPECT_LT((l.position - r.position).norm(), 1e-9);
    EXPECT_LT(quat_distance(l.orientation, r.orientation), 1e-9);
    EXPECT_NEAR(l.orientation.norm(), 1.0, 1e-12);
  }
}

TEST(PoseErrorTest, Cases) {
  const Pose p(Vector3d(0.3, -0.2, 1.0), Eigen::Quaterniond(Eigen::AngleAxisd(0.4, Vector3d::UnitX())));
  EXPECT_LT(pose_error(p, p).norm(), 1e-15);

  Vector6d e = pose_error(Pose::Identity(), Pose::Translation({0.1, 0, 0}));
  Vector6d expected;
  expected << 0.1, 0, 0, 0, 0, 0;
  EXPECT_LT((e - expected).norm(), 1e-15);

  e = pose_error(Pose::Identity(), Pose::Rotation(Vector3d::UnitZ(), M_PI / 2));
  const Eigen::Vector3d log_oracle = testing::so3_log(Eigen::AngleAxisd(M_PI / 2, Vector3d::UnitZ()).toRotationMatrix());
  EXPECT_LT((e.tail<3>() - log_oracle).norm(), 1e-12);
  EXPECT_NEAR(e[5], M_PI / 2, 1e-12);
}

TEST(PoseErrorTest, AngleStaysWithinPi) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 2 * M_PI);
  for (int k = 0; k < 500; ++k) {
    const Eigen::Quaterniond q(Eigen::AngleAxisd(u(rng), testing::random_unit(rng)));
    const double angle = quaternion_log(q).norm();
    EXPECT_GE(angle, 0.0);
    EXPECT_LE(angle, M_PI + 1e-12);
    EXPECT_LT(quat_distance(quaternion_exp(quaternion_log(q)), q), 1e-12);
  }
}

TEST(ForwardKinematicsTest, ZeroConfigurationComposesOffsets) {
  const KinematicChain chain = planar_2r();
  const Pose p = forward_kinematics(chain, Eigen::Vector2d::Zero());
  EXPECT_LT((p.position - Vector3d(2, 0, 0)).norm(), 1e-15);
}

TEST(ForwardKinematicsTest, Planar2R) {
  const KinematicChain chain = planar_2r();
  const double q1 = M_PI / 2, q2 = 0.0;
  const Pose p = forward_kinematics(chain, Eigen::Vector2d(q1, q2));
  const Vector3d analytic(std::cos(q1) + std::cos(q1 + q2), std::sin(q1) + std::sin(q1 + q2), 0);
  EXPECT_LT((p.position - analytic).norm(), 1e-12);
  EXPECT_LT((p.position - Vector3d(0, 2, 0)).norm(), 1e-12);
}

TEST(ForwardKinematicsTest, Prismatic) {
  const Pose p = forward_kinematics(single_prismatic_z(), Eigen::Vector2d(0.5, 0.0));
  EXPECT_LT((p.position - Vector3d(0, 0, 0.5)).norm(), 1e-15);
}

TEST(ForwardKinematicsTest, DimensionMismatchThrows) {
  EXPECT_THROW(forward_kinematics(planar_2r(), Eigen::Vector3d::Zero()), ContractViolation);
  EXPECT_THROW(jacobian(planar_2r(), Eigen::VectorXd(1)), ContractViolation);
}

TEST(ForwardKinematicsTest, MatchesHomogeneousMatrixOracle) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    const KinematicChain chain = testing::random_chain(rng, 2 + k % 10);
    const Eigen::VectorXd q = chain.random_configuration(rng);
    const Pose p = forward_kinematics(chain, q);
    EXPECT_LT((p.matrix() - testing::fk_matrix(chain, q)).norm(), 1e-12);
    EXPECT_NEAR(p.orientation.norm(), 1.0, 1e-9);
  }
}

TEST(JacobianTest, Planar2RAtZero) {
  const Matrix6Xd J = jacobian(planar_2r(), Eigen::Vector2d::Zero());
  Eigen::Matrix<double, 6, 2> expected;
  expected << 0, 0, 2, 1, 0, 0, 0, 0, 0, 0, 1, 1;
  EXPECT_LT((J - expected).norm(), 1e-12);
  EXPECT_LT((J - testing::fd_jacobian(planar_2r(), Eigen::Vector2d::Zero())).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(JacobianTest, PrismaticColumn) {
  const Matrix6Xd J = jacobian(single_prismatic_z(), Eigen::Vector2d(0.2, 0.0));
  Vector6d expected;
  expected << 0, 0, 1, 0, 0, 0;
  EXPECT_LT((J.col(0) - expected).norm(), 1e-15);
}

TEST(JacobianTest, Random11DofMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 100; ++k) {
    const KinematicChain chain = testing::random_chain(rng, 11);
    const Eigen::VectorXd q = chain.random_configuration(rng);
    EXPECT_LT((jacobian(chain, q) - testing::fd_jacobian(chain, q)).lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

TEST(JacobianTest, PoseErrorRateConvergesToJacobianTimesVelocity) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  const KinematicChain chain = bundled_chain("mobile_franka");
  for (int k = 0; k < 20; ++k) {
    const Eigen::VectorXd q = chain.random_configuration(rng);
    Eigen::VectorXd qdot(chain.dof());
    for (auto& v : qdot) v = n(rng);
    const Vector6d twist = jacobian(chain, q) * qdot;
    double prev = 1e9;
    for (double dt : {1e-2, 1e-3, 1e-4}) {
      const Vector6d rate =
          pose_error(forward_kinematics(chain, q), forward_kinematics(chain, q + qdot * dt)) / dt;
      const double err = (rate - twist).norm();
      EXPECT_LT(err, prev);
      EXPECT_LT(err, 50.0 * dt * (1.0 + qdot.squaredNorm()));
      prev = err;
    }
  }
}

TEST(ChainFileTest, BundledChains) {
  const KinematicChain hand = bundled_chain("floating_hand");
  ASSERT_EQ(hand.dof(), 6u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(hand.joint(i).kind, JointKind::kPrismatic);
  for (int i = 3; i < 6; ++i) EXPECT_EQ(hand.joint(i).kind, JointKind::kRevolute);

  const KinematicChain robot = bundled_chain("mobile_franka");
  EXPECT_EQ(robot.dof(), 11u);
  EXPECT_EQ(robot.base_joint_count(), 4u);
  EXPECT_THROW(bundled_chain("nope"), ContractViolation);
}

TEST(ChainFileTest, RoundTrip) {
  for (const auto& name : bundled_chain_names()) {
    const KinematicChain a = bundled_chain(name);
    const KinematicChain b = load_chain(chain_to_json(a));
    ASSERT_EQ(a.dof(), b.dof());
    EXPECT_EQ(a.name(), b.name());
    EXPECT_EQ(a.base_joint_count(), b.base_joint_count());
    for (std::size_t i = 0; i < a.dof(); ++i) {
      EXPECT_EQ(a.joint(i).name, b.joint(i).name);
      EXPECT_EQ(a.joint(i).kind, b.joint(i).kind);
      EXPECT_EQ(a.joint(i).lower, b.joint(i).lower);
      EXPECT_EQ(a.joint(i).upper, b.joint(i).upper);
      EXPECT_LT((a.joint(i).origin.matrix() - b.joint(i).origin.matrix()).norm(), 1e-14);
    }
    std::mt19937_64 rng(2);
    const Eigen::VectorXd q = a.random_configuration(rng);
    EXPECT_LT((forward_kinematics(a, q).matrix() - forward_kinematics(b, q).matrix()).norm(), 1e-13);
  }
}

TEST(ChainFileTest, Errors) {
  const char* non_unit = R"({"name":"bad","base_joint_count":1,"joints":[
    {"name":"a","kind":"revolute","axis":[0,0,1],"pos_limits":[-1,1],"vel_limit":1},
    {"name":"elbow","kind":"revolute","axis":[0,0,2],"pos_limits":[-1,1],"vel_limit":1}]})";
  try {
    load_chain(non_unit);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("non-unit axis"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("elbow"), std::string::npos);
  }
  const char* inverted = R"({"base_joint_count":1,"joints":[
    {"name":"a","kind":"prismatic","axis":[1,0,0],"pos_limits":[1,-1],"vel_limit":1},
    {"name":"b","kind":"revolute","axis":[0,0,1],"pos_limits":[-1,1],"vel_limit":1}]})";
  EXPECT_THROW(load_chain(inverted), ParseError);
  const char* missing = R"({"base_joint_count":1,"joints":[{"name":"a","kind":"revolute","axis":[1,0,0]}]})";
  EXPECT_THROW(load_chain(missing), ParseError);
  EXPECT_THROW(load_chain("not json"), ParseError);
}

}  // namespace
}  // namespace dskill
