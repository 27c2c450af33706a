#include "dskill/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <ostream>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "dskill/errors.hpp"
#include "dskill/ik.hpp"

namespace dskill {

namespace {

double uniform(std::mt19937_64& rng, const Range& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                              Eigen::Vector3d* closest = nullptr) {
  const Eigen::Vector3d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  const Eigen::Vector3d c = a + t * ab;
  if (closest != nullptr) *closest = c;
  return (p - c).norm();
}

void put_pose(Eigen::VectorXd& v, Eigen::Index& k, const Pose& p) {
  v.segment<3>(k) = p.position;
  v[k + 3] = p.orientation.w();
  v[k + 4] = p.orientation.x();
  v[k + 5] = p.orientation.y();
  v[k + 6] = p.orientation.z();
  k += 7;
}

// Home posture for the whole-robot agent: base behind the start region facing
// the cabinet (-x), arm bent with the gripper pointing forward.
const double kRobotArmHome[7] = {0.0, -0.3, 0.0, -2.2, 0.0, 1.9, 0.785};

}  // namespace

std::string to_string(AgentMode mode) {
  return mode == AgentMode::kFloatingHand ? "floating_hand" : "whole_robot";
}

AgentMode agent_mode_from_string(const std::string& s) {
  if (s == "floating_hand" || s == "hand" || s == "ee") return AgentMode::kFloatingHand;
  if (s == "whole_robot" || s == "robot") return AgentMode::kWholeRobot;
  throw ContractViolation("unknown agent mode '" + s + "'");
}

void CabinetRanges::validate() const {
  const std::pair<const char*, Range> all[] = {
      {"drawer_height", drawer_height},         {"face_width", face_width},
      {"face_height", face_height},             {"handle_lateral", handle_lateral},
      {"handle_vertical", handle_vertical},     {"handle_half_width", handle_half_width},
      {"full_length", full_length},             {"friction", friction}};
  for (const auto& [name, r] : all) {
    if (!(r.lo <= r.hi)) throw ContractViolation(std::string("cabinet range '") + name + "': lo > hi");
  }
  if (full_length.lo <= 0.0) throw ContractViolation("cabinet range 'full_length' must be > 0");
  if (friction.lo < 0.0 || friction.hi > 1.0) throw ContractViolation("cabinet range 'friction' must lie in [0, 1]");
  if (handle_lateral.lo < -1.0 || handle_lateral.hi > 1.0 || handle_vertical.lo < -1.0 || handle_vertical.hi > 1.0) {
    throw ContractViolation("handle placement ranges are fractions in [-1, 1]");
  }
}

CabinetRanges load_cabinet_ranges(const std::string& json_text) {
  CabinetRanges r;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    auto read = [&](const char* key, Range& out) {
      if (!doc.contains(key)) return;
      const auto& a = doc.at(key);
      if (!a.is_array() || a.size() != 2) throw ParseError(std::string("cabinet range '") + key + "' must be [lo, hi]");
      out = {a[0].get<double>(), a[1].get<double>()};
    };
    read("drawer_height", r.drawer_height);
    read("face_width", r.face_width);
    read("face_height", r.face_height);
    read("handle_lateral", r.handle_lateral);
    read("handle_vertical", r.handle_vertical);
    read("handle_half_width", r.handle_half_width);
    read("full_length", r.full_length);
    read("friction", r.friction);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("cabinet ranges: ") + e.what());
  }
  try {
    r.validate();
  } catch (const ContractViolation& e) {
    throw ParseError(e.what());
  }
  return r;
}

CabinetRanges load_cabinet_ranges_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot read cabinet ranges '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return load_cabinet_ranges(ss.str());
}

std::string cabinet_ranges_to_json(const CabinetRanges& r) {
  nlohmann::json doc;
  auto put = [&](const char* key, const Range& v) { doc[key] = {v.lo, v.hi}; };
  put("drawer_height", r.drawer_height);
  put("face_width", r.face_width);
  put("face_height", r.face_height);
  put("handle_lateral", r.handle_lateral);
  put("handle_vertical", r.handle_vertical);
  put("handle_half_width", r.handle_half_width);
  put("full_length", r.full_length);
  put("friction", r.friction);
  return doc.dump(2);
}

Pose CabinetModel::face_pose(double extension) const {
  return {base_pose.apply(face_center) + drawer_axis * extension, base_pose.orientation};
}

Pose CabinetModel::handle_pose(double extension) const { return compose(face_pose(extension), handle_offset); }

std::pair<Eigen::Vector3d, Eigen::Vector3d> CabinetModel::handle_segment(double extension) const {
  const Pose h = handle_pose(extension);
  const Eigen::Vector3d lateral = h.orientation * Eigen::Vector3d::UnitY();
  return {h.position - handle_half_width * lateral, h.position + handle_half_width * lateral};
}

void CabinetModel::validate() const {
  if (!(full_length > 0.0)) throw ContractViolation("cabinet full_length must be > 0");
  if (std::abs(drawer_axis.norm() - 1.0) > 1e-9) throw ContractViolation("cabinet drawer_axis must be unit");
  if (friction_resistance < 0.0 || friction_resistance > 1.0) {
    throw ContractViolation("cabinet friction_resistance must lie in [0, 1]");
  }
}

CabinetModel sample_cabinet(std::uint64_t seed, const CabinetRanges& ranges) {
  ranges.validate();
  std::mt19937_64 rng(seed);
  CabinetModel c;
  c.id = static_cast<int>(seed);
  c.base_pose = Pose::Identity();
  c.drawer_axis = Eigen::Vector3d::UnitX();
  const double height = uniform(rng, ranges.drawer_height);
  c.face_size = {uniform(rng, ranges.face_width), uniform(rng, ranges.face_height)};
  c.handle_half_width = uniform(rng, ranges.handle_half_width);
  const double lateral_room = std::max(0.0, 0.5 * c.face_size.x() - c.handle_half_width - 0.02);
  const double vertical_room = std::max(0.0, 0.5 * c.face_size.y() - 0.03);
  const double lateral = uniform(rng, ranges.handle_lateral) * lateral_room;
  const double vertical = uniform(rng, ranges.handle_vertical) * vertical_room;
  c.full_length = uniform(rng, ranges.full_length);
  c.friction_resistance = uniform(rng, ranges.friction);
  c.face_center = Eigen::Vector3d(0.0, 0.0, height);
  c.handle_offset = Pose::Translation({0.04, lateral, vertical});
  return c;
}

std::vector<CabinetModel> sample_cabinets(std::uint64_t first, std::size_t count, const CabinetRanges& ranges) {
  std::vector<CabinetModel> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_cabinet(first + i, ranges));
  return out;
}

Action Action::FromVector(const Eigen::VectorXd& flat) {
  if (flat.size() < 3) throw ContractViolation("Action::FromVector: vector too short");
  Action a;
  a.joint_velocity = flat.head(flat.size() - 2);
  a.finger = flat.tail<2>();
  return a;
}

Eigen::VectorXd Action::vector() const {
  Eigen::VectorXd v(joint_velocity.size() + 2);
  v << joint_velocity, finger;
  return v;
}

DrawerEnv::DrawerEnv(AgentMode mode, EnvConfig cfg)
    : DrawerEnv(mode, bundled_chain(mode == AgentMode::kFloatingHand ? "floating_hand" : "mobile_franka"), cfg) {}

DrawerEnv::DrawerEnv(AgentMode mode, KinematicChain chain, EnvConfig cfg)
    : mode_(mode), chain_(std::move(chain)), cfg_(cfg) {
  if (!(cfg_.dt > 0.0)) throw ContractViolation("EnvConfig: dt must be > 0");
  if (cfg_.max_steps < 1) throw ContractViolation("EnvConfig: max_steps must be >= 1");
}

std::size_t DrawerEnv::observation_dim() const { return 7 + 14 + 14 + 2 + 2 * chain_.dof() + 12; }

Eigen::Vector2d DrawerEnv::finger_targets(const Eigen::Vector2d& command) const {
  const Eigen::Vector2d c = command.cwiseMax(-1.0).cwiseMin(1.0);
  return (c.array() + 1.0) * 0.5 * cfg_.finger_max;
}

WorldState DrawerEnv::reset(const CabinetModel& cabinet, std::uint64_t seed) const {
  cabinet.validate();
  std::mt19937_64 rng(seed);
  WorldState s;
  s.mode = mode_;
  s.cabinet = cabinet;
  const auto n = static_cast<Eigen::Index>(chain_.dof());
  s.agent_q = Eigen::VectorXd::Zero(n);
  s.agent_qdot = Eigen::VectorXd::Zero(n);
  if (mode_ == AgentMode::kFloatingHand) {
    s.agent_q[0] = uniform(rng, {0.35, 0.60});
    s.agent_q[1] = uniform(rng, {-0.30, 0.30});
    s.agent_q[2] = uniform(rng, {0.35, 0.85});
    for (int i = 3; i < 6; ++i) s.agent_q[i] = uniform(rng, {-0.15, 0.15});
  } else {
    s.agent_q[0] = uniform(rng, {1.05, 1.20});
    s.agent_q[1] = uniform(rng, {-0.15, 0.15});
    s.agent_q[2] = M_PI + uniform(rng, {-0.1, 0.1});
    s.agent_q[3] = uniform(rng, {0.10, 0.40});
    for (int i = 0; i < 7; ++i) s.agent_q[4 + i] = kRobotArmHome[i] + uniform(rng, {-0.1, 0.1});
  }
  s.agent_q = chain_.clamp(s.agent_q);
  // Fingers start half open, the rest position of a zero finger command.
  s.finger_positions = finger_targets(Eigen::Vector2d::Zero());
  s.finger_targets = s.finger_positions;
  return s;
}

Pose DrawerEnv::ee_pose(const WorldState& state) const { return forward_kinematics(chain_, state.agent_q); }

std::pair<Eigen::Vector3d, Eigen::Vector3d> DrawerEnv::fingertips(const WorldState& state) const {
  const Pose ee = ee_pose(state);
  const Eigen::Vector3d lateral = ee.orientation * Eigen::Vector3d::UnitY();
  return {ee.position + state.finger_positions[0] * lateral, ee.position - state.finger_positions[1] * lateral};
}

double DrawerEnv::opening(const WorldState& state) const {
  return state.drawer_extension / state.cabinet.full_length;
}

double DrawerEnv::ee_handle_distance(const WorldState& state) const {
  const auto [a, b] = state.cabinet.handle_segment(state.drawer_extension);
  return point_segment_distance(ee_pose(state).position, a, b);
}

bool DrawerEnv::success(const WorldState& state) const {
  return state.drawer_extension >= cfg_.success_fraction * state.cabinet.full_length;
}

double DrawerEnv::reward(const WorldState& /*prev*/, const Action& /*action*/, const WorldState& next) const {
  const double d = ee_handle_distance(next);
  const double c_op = opening(next);
  double r = -cfg_.w_distance * d;
  if (d > cfg_.stage_distance) return r + cfg_.stage_rewards[0];
  r += cfg_.w_link * c_op;
  if (c_op < cfg_.success_fraction) return r + cfg_.stage_rewards[1];
  return r + cfg_.stage_rewards[2] + cfg_.w_static * std::exp(-std::abs(next.drawer_velocity) / cfg_.v_ref);
}

StepResult DrawerEnv::step(const WorldState& state, const Action& action) const {
  if (static_cast<std::size_t>(action.joint_velocity.size()) != chain_.dof()) {
    throw ContractViolation("DrawerEnv::step: action has wrong dimension for " + to_string(mode_));
  }
  Action clamped = action;
  clamped.joint_velocity = action.joint_velocity.cwiseMax(-1.0).cwiseMin(1.0);
  clamped.finger = action.finger.cwiseMax(-1.0).cwiseMin(1.0);
  const Eigen::VectorXd qdot = clamped.joint_velocity.cwiseProduct(chain_.velocity_limits());
  return advance(state, qdot, finger_targets(clamped.finger), &clamped);
}

StepResult DrawerEnv::step_joint_velocity(const WorldState& state, const Eigen::VectorXd& qdot,
                                          const Eigen::Vector2d& targets) const {
  if (static_cast<std::size_t>(qdot.size()) != chain_.dof()) {
    throw ContractViolation("DrawerEnv::step_joint_velocity: wrong dimension");
  }
  return advance(state, qdot, targets.cwiseMax(0.0).cwiseMin(cfg_.finger_max), nullptr);
}

Eigen::VectorXd DrawerEnv::move_ee_toward(Eigen::VectorXd q, const Eigen::Vector3d& target) const {
  // Two damped least-squares steps on the linear rows; enough for the
  // centimetre corrections used by the grasp model.
  for (int it = 0; it < 2; ++it) {
    Matrix6Xd jac;
    const Pose now = forward_kinematics(chain_, q, &jac);
    const Eigen::Vector3d err = target - now.position;
    if (err.norm() < 1e-9) break;
    const Eigen::Matrix<double, 3, Eigen::Dynamic> jl = jac.topRows<3>();
    const Eigen::Matrix3d jjt = jl * jl.transpose() + 1e-8 * Eigen::Matrix3d::Identity();
    q = chain_.clamp(q + jl.transpose() * jjt.ldlt().solve(err));
  }
  return q;
}

StepResult DrawerEnv::advance(const WorldState& state, const Eigen::VectorXd& qdot, const Eigen::Vector2d& targets,
                              const Action* action) const {
  const double dt = cfg_.dt;
  StepResult out;
  WorldState& next = out.state;
  next = state;

  const Pose ee_before = ee_pose(state);
  next.agent_q = chain_.clamp(state.agent_q + qdot * dt);

  const Eigen::Vector2d step_limit = Eigen::Vector2d::Constant(cfg_.finger_speed * dt);
  next.finger_targets = targets;
  next.finger_positions = state.finger_positions + (targets - state.finger_positions).cwiseMax(-step_limit).cwiseMin(step_limit);
  next.finger_velocities = (next.finger_positions - state.finger_positions) / dt;
  const bool closing = targets.mean() < 0.5 * cfg_.finger_max;

  const CabinetModel& cab = state.cabinet;
  double ext = state.drawer_extension;
  bool attached = state.grasp_attached && closing;
  if (attached) {
    // The grasped handle moves along the drawer axis by the resisted share of
    // the EE motion. The closed fingers hold the TCP on the bar, so the
    // commanded TCP is projected onto the moved handle; a command that lands
    // farther than break_radius from it tears the bar out of the grasp.
    const Eigen::Vector3d ee_moved = forward_kinematics(chain_, next.agent_q).position;
    const double along = (ee_moved - ee_before.position).dot(cab.drawer_axis);
    const double new_ext = std::clamp(ext + (1.0 - cab.friction_resistance) * along, 0.0, cab.full_length);
    const Eigen::Vector3d commanded = ee_moved + ((new_ext - ext) - along) * cab.drawer_axis;
    const auto [ma, mb] = cab.handle_segment(new_ext);
    Eigen::Vector3d held;
    if (point_segment_distance(commanded, ma, mb, &held) > cfg_.break_radius) {
      attached = false;
    } else {
      next.agent_q = move_ee_toward(next.agent_q, held);
      ext = new_ext;
    }
  }
  next.drawer_velocity = (ext - state.drawer_extension) / dt;
  next.drawer_extension = ext;

  // Grasp bookkeeping on the post-motion geometry.
  const auto [ha, hb] = cab.handle_segment(ext);
  const auto [tip_a, tip_b] = fingertips(next);
  const Eigen::Vector3d ee_now = ee_pose(next).position;
  if (state.grasp_attached) {
    next.grasp_attached = attached;
  } else if (closing && point_segment_distance(tip_a, ha, hb) <= cfg_.grasp_radius &&
             point_segment_distance(tip_b, ha, hb) <= cfg_.grasp_radius) {
    next.grasp_attached = true;
    // Closing fingers pull the bar into the grasp: the TCP settles on the
    // nearest handle point, which is at most grasp_radius away.
    Eigen::Vector3d closest;
    point_segment_distance(ee_now, ha, hb, &closest);
    next.agent_q = move_ee_toward(next.agent_q, closest);
  }
  next.agent_qdot = (next.agent_q - state.agent_q) / dt;

  next.step_count = state.step_count + 1;
  Action a;
  if (action != nullptr) {
    a = *action;
  } else {
    a.joint_velocity = qdot;
  }
  out.reward = reward(state, a, next);
  out.info.success = success(next);
  out.info.ee_handle_distance = ee_handle_distance(next);
  out.info.opening = opening(next);
  out.info.attached = next.grasp_attached;
  out.done = out.info.success || next.step_count >= cfg_.max_steps;
  return out;
}

Eigen::VectorXd DrawerEnv::observe(const WorldState& state, const ObservationNoise& noise,
                                   std::mt19937_64* rng) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(observation_dim()));
  const CabinetModel& cab = state.cabinet;
  Eigen::Index k = 0;
  put_pose(v, k, cab.base_pose);
  put_pose(v, k, cab.face_pose(state.drawer_extension));
  put_pose(v, k, cab.face_pose(cab.full_length));
  put_pose(v, k, cab.handle_pose(state.drawer_extension));
  put_pose(v, k, cab.handle_pose(cab.full_length));
  v[k++] = cab.full_length;
  v[k++] = state.drawer_extension;
  const Eigen::Index object_end = k;

  const auto n = static_cast<Eigen::Index>(chain_.dof());
  v.segment(k, n) = state.agent_q;
  k += n;
  v.segment(k, n) = state.agent_qdot;
  k += n;
  const auto [ta, tb] = fingertips(state);
  const Pose ee = ee_pose(state);
  const Eigen::Vector3d lateral = ee.orientation * Eigen::Vector3d::UnitY();
  // Fingertip velocity: EE linear velocity plus finger sliding.
  const Eigen::Vector3d ee_vel = (jacobian(chain_, state.agent_q) * state.agent_qdot).head<3>();
  v.segment<3>(k) = ta;
  v.segment<3>(k + 3) = tb;
  v.segment<3>(k + 6) = ee_vel + state.finger_velocities[0] * lateral;
  v.segment<3>(k + 9) = ee_vel - state.finger_velocities[1] * lateral;
  k += 12;

  if (!noise.zero()) {
    if (rng == nullptr) throw ContractViolation("DrawerEnv::observe: noise requires an RNG");
    auto add = [&](Eigen::Index start, Eigen::Index count, double sigma) {
      if (sigma <= 0.0) return;
      std::normal_distribution<double> g(0.0, sigma);
      for (Eigen::Index i = 0; i < count; ++i) v[start + i] += g(*rng);
    };
    add(0, 7, noise.cabinet);
    add(7, 14, noise.link);
    add(21, 14, noise.handle);
    add(35, 2, noise.size);
  }
  (void)object_end;
  return v;
}

WorldState sync_environments(const WorldState& hand_state, const DrawerEnv& hand_env, const WorldState& robot_state,
                             const DrawerEnv& robot_env, std::uint64_t ik_seed) {
  if (hand_state.cabinet.id != robot_state.cabinet.id) {
    throw ContractViolation("sync_environments: environments hold different cabinets");
  }
  WorldState out = robot_state;
  out.cabinet = hand_state.cabinet;
  out.drawer_extension = hand_state.drawer_extension;
  out.drawer_velocity = hand_state.drawer_velocity;
  out.grasp_attached = hand_state.grasp_attached;
  out.finger_positions = hand_state.finger_positions;
  out.finger_targets = hand_state.finger_targets;
  out.finger_velocities = hand_state.finger_velocities;
  out.step_count = hand_state.step_count;

  IkOptions opts;
  opts.lock_base = false;
  opts.seed = ik_seed;
  const IkResult ik = solve_ik(robot_env.chain(), robot_state.agent_q, hand_env.ee_pose(hand_state), opts);
  if (!ik.solved()) throw SyncError("sync_environments: robot cannot reach the hand pose");
  out.agent_q = *ik.q_hat;
  out.agent_qdot = Eigen::VectorXd::Zero(out.agent_q.size());
  return out;
}

void write_trace_header(std::ostream& os, std::size_t dof) {
  os << "step";
  for (std::size_t i = 0; i < dof; ++i) os << ",q_" << i;
  os << ",ee_x,ee_y,ee_z,ee_qw,ee_qx,ee_qy,ee_qz,d,c_op,reward,done\n";
}

void write_trace_row(std::ostream& os, const DrawerEnv& env, const WorldState& state, double reward, bool done) {
  os << state.step_count;
  for (Eigen::Index i = 0; i < state.agent_q.size(); ++i) os << ',' << state.agent_q[i];
  const Pose ee = env.ee_pose(state);
  os << ',' << ee.position.x() << ',' << ee.position.y() << ',' << ee.position.z() << ',' << ee.orientation.w()
     << ',' << ee.orientation.x() << ',' << ee.orientation.y() << ',' << ee.orientation.z() << ','
     << env.ee_handle_distance(state) << ',' << env.opening(state) << ',' << reward << ',' << (done ? 1 : 0) << '\n';
}

}  // namespace dskill
