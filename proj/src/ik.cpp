#include "dskill/ik.hpp"

#include <algorithm>
#include <random>

#include <Eigen/Cholesky>

#include "dskill/errors.hpp"

namespace dskill {

namespace {

// Per-iteration cap on the task-space correction; keeps DLS steps from
// overshooting when the linearization is poor.
constexpr double kMaxLinearStep = 2.0;
constexpr double kMaxAngularStep = 1.0;

Eigen::VectorXd dls_step(const Matrix6Xd& jac, const Vector6d& err, double lambda2) {
  const Eigen::Matrix<double, 6, 6> jjt =
      jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
  return jac.transpose() * jjt.ldlt().solve(err);
}

struct Attempt {
  Eigen::VectorXd q;
  int iterations = 0;
  double pos_err = 0.0;
  double rot_err = 0.0;
  bool converged = false;
};

Attempt run_dls(const KinematicChain& chain, Eigen::VectorXd q, const Pose& target, const IkOptions& opts) {
  const auto n_base = static_cast<Eigen::Index>(chain.base_joint_count());
  const double lambda2 = opts.damping * opts.damping;
  const Eigen::VectorXd lo = chain.lower_limits();
  const Eigen::VectorXd hi = chain.upper_limits();
  Matrix6Xd jac;
  Attempt a;
  for (int it = 0;; ++it) {
    const Pose ee = forward_kinematics(chain, q, &jac);
    Vector6d err = pose_error(ee, target);
    a.pos_err = err.head<3>().norm();
    a.rot_err = err.tail<3>().norm();
    a.iterations = it;
    if (a.pos_err <= opts.position_tolerance && a.rot_err <= opts.orientation_tolerance) {
      a.converged = true;
      break;
    }
    if (it == opts.max_iterations) break;

    if (a.pos_err > kMaxLinearStep) err.head<3>() *= kMaxLinearStep / a.pos_err;
    if (a.rot_err > kMaxAngularStep) err.tail<3>() *= kMaxAngularStep / a.rot_err;
    if (opts.lock_base) jac.leftCols(n_base).setZero();

    Eigen::VectorXd dq = dls_step(jac, err, lambda2);
    // Joints pinned at a limit and pushed further into it would swallow part of
    // the step; drop them and re-solve so the free joints take up the slack.
    bool pinned = false;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      const bool at_lo = q[i] <= lo[i] && dq[i] < 0.0;
      const bool at_hi = q[i] >= hi[i] && dq[i] > 0.0;
      if (at_lo || at_hi) {
        jac.col(i).setZero();
        pinned = true;
      }
    }
    if (pinned) dq = dls_step(jac, err, lambda2);
    q = chain.clamp(q + dq);
  }
  a.q = std::move(q);
  return a;
}

}  // namespace

void IkOptions::validate() const {
  if (!(position_tolerance > 0.0) || !(orientation_tolerance > 0.0)) {
    throw ContractViolation("IkOptions: tolerances must be > 0");
  }
  if (max_iterations < 1) throw ContractViolation("IkOptions: max_iterations must be >= 1");
  if (restarts < 1) throw ContractViolation("IkOptions: restarts must be >= 1");
  if (!(damping >= 0.0)) throw ContractViolation("IkOptions: damping must be >= 0");
}

IkResult solve_ik(const KinematicChain& chain, const Eigen::VectorXd& q0, const Pose& target,
                  const IkOptions& opts) {
  opts.validate();
  if (static_cast<std::size_t>(q0.size()) != chain.dof()) {
    throw ContractViolation("solve_ik: q0 has wrong dimension");
  }
  const Eigen::VectorXd start = chain.clamp(q0);
  const auto n_base = static_cast<Eigen::Index>(chain.base_joint_count());
  std::mt19937_64 rng(opts.seed);

  IkResult result;
  int total_iterations = 0;
  Attempt best;
  bool have_best = false;
  for (int attempt = 0; attempt <= opts.restarts; ++attempt) {
    Eigen::VectorXd seed = start;
    if (attempt > 0) {
      seed = chain.random_configuration(rng);
      if (opts.lock_base) seed.head(n_base) = start.head(n_base);
    }
    Attempt a = run_dls(chain, seed, target, opts);
    total_iterations += a.iterations;
    if (!have_best || a.pos_err + a.rot_err < best.pos_err + best.rot_err) {
      best = a;
      have_best = true;
    }
    if (a.converged) break;
  }

  result.iterations_used = total_iterations;
  result.position_error = best.pos_err;
  result.orientation_error = best.rot_err;
  if (best.converged) {
    result.z_res = 1;
    if (opts.lock_base) best.q.head(n_base) = start.head(n_base);
    result.q_hat = std::move(best.q);
  }
  return result;
}

}  // namespace dskill
