#include "dskill/controller.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <Eigen/SVD>

#include "dskill/errors.hpp"

namespace dskill {

void ControllerConfig::validate(std::size_t dof) const {
  if (!(omega1 > omega2 && omega2 > 0.0)) throw ContractViolation("ControllerConfig: need omega1 > omega2 > 0");
  if (k < 1) throw ContractViolation("ControllerConfig: k must be >= 1");
  if (!(dt > 0.0)) throw ContractViolation("ControllerConfig: dt must be > 0");
  if (qdot_max.size() != 0) {
    if (static_cast<std::size_t>(qdot_max.size()) != dof) {
      throw ContractViolation("ControllerConfig: qdot_max has the wrong length");
    }
    if (!(qdot_max.array() > 0.0).all()) throw ContractViolation("ControllerConfig: qdot_max must be > 0");
  }
  ik.validate();
}

Eigen::VectorXd ControllerConfig::velocity_bounds(std::size_t dof) const {
  if (qdot_max.size() != 0) return qdot_max;
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dof), M_PI);
}

Vector6d desired_ee_velocity(const Pose& x_ee, const Pose& x_h_next, double dt) {
  if (!(dt > 0.0)) throw ContractViolation("desired_ee_velocity: dt must be > 0");
  return pose_error(x_ee, x_h_next) / dt;
}

Pose rollout_reference(const DrawerEnv& hand_env, const PolicyFn& policy, const WorldState& hand_state, int k) {
  if (k < 1) throw ContractViolation("rollout_reference: k must be >= 1");
  if (hand_env.mode() != AgentMode::kFloatingHand) {
    throw ContractViolation("rollout_reference: needs a floating-hand environment");
  }
  WorldState s = hand_state;
  for (int i = 0; i < k; ++i) {
    const StepResult r = hand_env.step(s, Action::FromVector(policy(hand_env.observe(s))));
    s = r.state;
    if (r.done) break;
  }
  return hand_env.ee_pose(s);
}

Eigen::MatrixXd build_cost_matrix(int z_res, const ControllerConfig& cfg, const KinematicChain& chain) {
  if (z_res != 0 && z_res != 1) throw ContractViolation("build_cost_matrix: z_res must be 0 or 1");
  const double c_base = cfg.omega1 * z_res + cfg.omega2 * (1 - z_res);
  const double c_arm = cfg.omega1 * (1 - z_res) + cfg.omega2 * z_res;
  const auto n = static_cast<Eigen::Index>(chain.dof());
  const auto nb = static_cast<Eigen::Index>(chain.base_joint_count());
  Eigen::VectorXd d(n);
  d.head(nb).setConstant(c_base);
  d.tail(n - nb).setConstant(c_arm);
  return d.asDiagonal();
}

int reachability_probe(const KinematicChain& chain, const Eigen::VectorXd& q_t, const Pose& probe_target,
                       const ControllerConfig& cfg) {
  IkOptions opts = cfg.ik;
  opts.lock_base = true;
  return solve_ik(chain, q_t, probe_target, opts).z_res;
}

ControlStepTrace control_step(const KinematicChain& chain, const Eigen::VectorXd& q_t, const Pose& x_h_next,
                              const Pose& probe_target, const ControllerConfig& cfg) {
  cfg.validate(chain.dof());
  if (static_cast<std::size_t>(q_t.size()) != chain.dof()) throw ContractViolation("control_step: q_t has wrong length");
  ControlStepTrace trace;
  Matrix6Xd jac;
  const Pose x_ee = forward_kinematics(chain, q_t, &jac);
  trace.desired_twist = desired_ee_velocity(x_ee, x_h_next, cfg.dt);
  trace.probe_target = probe_target;
  trace.z_res = reachability_probe(chain, q_t, probe_target, cfg);
  const Eigen::MatrixXd cost = build_cost_matrix(trace.z_res, cfg, chain);
  trace.c_base = cost(0, 0);
  trace.c_arm = cost(cost.rows() - 1, cost.cols() - 1);

  QpProblem p;
  p.H = cost;
  p.A_eq = jac;
  p.b_eq = trace.desired_twist;
  const Eigen::VectorXd vmax = cfg.velocity_bounds(chain.dof());
  p.lb = -vmax;
  p.ub = vmax;
  if (cfg.respect_position_limits) {
    p.lb = p.lb.cwiseMax((chain.lower_limits() - q_t) / cfg.dt).cwiseMin(0.0);
    p.ub = p.ub.cwiseMin((chain.upper_limits() - q_t) / cfg.dt).cwiseMax(0.0);
  }

  QpSolution sol = solve_qp(p);
  trace.qp_status = sol.status;
  if (sol.status != QpStatus::kOptimal) {
    trace.relaxed = true;
    try {
      sol = solve_qp_relaxed(p, cfg.relaxed_penalty);
    } catch (const QpSolverError& e) {
      throw ControllerError(std::string("control_step: relaxed QP failed: ") + e.what());
    }
    if (sol.status != QpStatus::kOptimal) throw ControllerError("control_step: relaxed QP did not converge");
  }
  trace.qdot_d = sol.x;
  return trace;
}

Eigen::VectorXd pseudoinverse_velocity(const KinematicChain& chain, const Eigen::VectorXd& q, const Vector6d& twist) {
  const Matrix6Xd jac = jacobian(chain, q);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.solve(twist);
}

HandEpisode run_hand_episode(const DrawerEnv& hand_env, const PolicyFn& policy, const WorldState& initial,
                             const ObservationNoise& noise, std::mt19937_64* rng) {
  HandEpisode ep;
  ep.states.push_back(initial);
  WorldState s = initial;
  for (;;) {
    const StepResult r = hand_env.step(s, Action::FromVector(policy(hand_env.observe(s, noise, rng))));
    s = r.state;
    ep.states.push_back(s);
    if (r.done) {
      ep.success = r.info.success;
      break;
    }
  }
  return ep;
}

RobotEpisode execute_on_robot(const DrawerEnv& robot_env, const WorldState& robot_initial, const DrawerEnv& hand_env,
                              const HandEpisode& hand, const PolicyFn* policy, const ControllerConfig& cfg) {
  RobotEpisode ep;
  ep.states.push_back(robot_initial);
  if (hand.states.size() < 2) return ep;
  const KinematicChain& chain = robot_env.chain();
  const auto T = hand.states.size() - 1;
  WorldState s = robot_initial;
  double sq_err = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Pose x_next = hand_env.ee_pose(hand.states[t + 1]);
    const Pose probe = policy != nullptr ? rollout_reference(hand_env, *policy, hand.states[t], cfg.k)
                                         : hand_env.ee_pose(hand.states[std::min(t + static_cast<std::size_t>(cfg.k), T)]);
    ControlStepTrace trace;
    try {
      trace = control_step(chain, s.agent_q, x_next, probe, cfg);
    } catch (const ControllerError& e) {
      ep.controller_failed = true;
      ep.failure = e.what();
      ep.success = false;
      break;
    }
    ep.relaxed_steps += trace.relaxed ? 1 : 0;
    ep.max_qdot = std::max(ep.max_qdot, trace.qdot_d.cwiseAbs().maxCoeff());
    const StepResult r = robot_env.step_joint_velocity(s, trace.qdot_d, hand.states[t + 1].finger_targets);
    s = r.state;
    ep.steps.push_back(std::move(trace));
    ep.states.push_back(s);
    sq_err += (robot_env.ee_pose(s).position - x_next.position).squaredNorm();
    ep.length = static_cast<int>(t + 1);
    if (r.done) {
      ep.success = r.info.success;
      break;
    }
  }
  if (ep.length > 0) ep.tracking_rms = std::sqrt(sq_err / ep.length);
  return ep;
}

EvalResult evaluate_on_robot(const PolicyFn& policy, const DrawerEnv& hand_env, const DrawerEnv& robot_env,
                             const std::vector<CabinetModel>& cabinets, int episodes_per_seed, int seeds,
                             const ControllerConfig& cfg, const ObservationNoise& noise, std::uint64_t seed_base) {
  if (cabinets.empty()) throw ContractViolation("evaluate_on_robot: no cabinets");
  if (episodes_per_seed < 1 || seeds < 1) throw ContractViolation("evaluate_on_robot: need episodes and seeds");
  EvalResult res;
  const int limit = robot_env.config().max_steps;
  for (int k = 0; k < seeds; ++k) {
    int wins = 0;
    double length = 0.0;
    for (int e = 0; e < episodes_per_seed; ++e) {
      const std::uint64_t rs = evaluation_reset_seed(seed_base, k, e);
      const CabinetModel& cab = cabinets[static_cast<std::size_t>(e) % cabinets.size()];
      std::mt19937_64 noise_rng(rs);
      const HandEpisode hand = run_hand_episode(hand_env, policy, hand_env.reset(cab, rs), noise, &noise_rng);
      bool success = false;
      int steps = limit;
      try {
        const WorldState start = sync_environments(hand.states.front(), hand_env, robot_env.reset(cab, rs), robot_env, rs);
        const RobotEpisode robot = execute_on_robot(robot_env, start, hand_env, hand, &policy, cfg);
        success = robot.success;
        steps = robot.length;
      } catch (const SyncError&) {
        success = false;
      }
      wins += success ? 1 : 0;
      length += success ? steps : limit;
    }
    res.per_seed_success.push_back(static_cast<double>(wins) / episodes_per_seed);
    res.per_seed_length.push_back(length / episodes_per_seed);
  }
  for (std::size_t k = 0; k < res.per_seed_success.size(); ++k) {
    res.success_rate += res.per_seed_success[k] / seeds;
    res.avg_length += res.per_seed_length[k] / seeds;
  }
  return res;
}

TrackingResult track_trajectory(const KinematicChain& chain, const Eigen::VectorXd& q0, const std::vector<Pose>& poses,
                                const ControllerConfig& cfg, TrackingMethod method) {
  cfg.validate(chain.dof());
  TrackingResult out;
  out.q.push_back(chain.clamp(q0));
  if (poses.size() < 2) return out;
  const Eigen::VectorXd vmax = cfg.velocity_bounds(chain.dof());
  const std::size_t T = poses.size() - 1;
  double sq_err = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const Eigen::VectorXd& q = out.q.back();
    Eigen::VectorXd qdot;
    if (method == TrackingMethod::kQp) {
      ControlStepTrace trace =
          control_step(chain, q, poses[t + 1], poses[std::min(t + static_cast<std::size_t>(cfg.k), T)], cfg);
      qdot = trace.qdot_d;
      out.traces.push_back(std::move(trace));
      const bool saturated = ((qdot.cwiseAbs() - vmax).array() >= -1e-9).any();
      out.limit_hits += saturated ? 1 : 0;
      out.max_abs_qdot.push_back(qdot.cwiseAbs().maxCoeff());
    } else {
      const Vector6d twist = desired_ee_velocity(forward_kinematics(chain, q), poses[t + 1], cfg.dt);
      qdot = pseudoinverse_velocity(chain, q, twist);
      out.max_abs_qdot.push_back(qdot.cwiseAbs().maxCoeff());
      out.limit_hits += ((qdot.cwiseAbs() - vmax).array() > 0.0).any() ? 1 : 0;
      qdot = qdot.cwiseMax(-vmax).cwiseMin(vmax);
    }
    out.q.push_back(chain.clamp(q + qdot * cfg.dt));
    sq_err += (forward_kinematics(chain, out.q.back()).position - poses[t + 1].position).squaredNorm();
  }
  out.tracking_rms = std::sqrt(sq_err / static_cast<double>(T));
  return out;
}

void write_control_trace_header(std::ostream& os, std::size_t dof) {
  os << "step,z_res,c_base,c_arm,qp_status,relaxed,max_abs_qdot";
  for (std::size_t i = 0; i < dof; ++i) os << ",qdot_" << i;
  os << '\n';
}

void write_control_trace_row(std::ostream& os, int step, const ControlStepTrace& trace) {
  os << step << ',' << trace.z_res << ',' << trace.c_base << ',' << trace.c_arm << ',' << to_string(trace.qp_status)
     << ',' << (trace.relaxed ? 1 : 0) << ',' << trace.qdot_d.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < trace.qdot_d.size(); ++i) os << ',' << trace.qdot_d[i];
  os << '\n';
}

}  // namespace dskill
