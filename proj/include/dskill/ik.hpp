#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>

#include "dskill/kinematics.hpp"

namespace dskill {

struct IkOptions {
  int max_iterations = 100;
  double position_tolerance = 1e-4;   // m
  double orientation_tolerance = 1e-3;  // rad
  double damping = 1e-3;
  bool lock_base = false;
  int restarts = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IkResult {
  int z_res = 0;
  std::optional<Eigen::VectorXd> q_hat;
  int iterations_used = 0;
  double position_error = 0.0;
  double orientation_error = 0.0;

  bool solved() const { return z_res == 1; }
};

/// Damped least squares IK with joint-limit clamping and seeded random restarts.
///
/// The first attempt starts at q0; each restart draws a fresh in-limit seed
/// (base entries stay at q0 when lock_base is set). Unreachable targets are
/// reported through z_res = 0, never by throwing.
IkResult solve_ik(const KinematicChain& chain, const Eigen::VectorXd& q0, const Pose& target,
                  const IkOptions& opts = {});

}  // namespace dskill
