#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bundled_chains.hpp"
#include "dskill/errors.hpp"
#include "dskill/kinematics.hpp"

namespace dskill {

namespace {

using nlohmann::json;

Eigen::Vector3d read_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParseError(what + ": expected an array of 3 numbers");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

Pose read_pose(const json& j, const std::string& what) {
  if (!j.is_object()) throw ParseError(what + ": expected an object with 'pos' and 'quat'");
  Eigen::Vector3d p = j.contains("pos") ? read_vec3(j.at("pos"), what + ".pos") : Eigen::Vector3d::Zero();
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  if (j.contains("quat")) {
    const json& jq = j.at("quat");
    if (!jq.is_array() || jq.size() != 4) throw ParseError(what + ".quat: expected [w, x, y, z]");
    q = Eigen::Quaterniond(jq[0].get<double>(), jq[1].get<double>(), jq[2].get<double>(), jq[3].get<double>());
    if (std::abs(q.norm() - 1.0) > 1e-6) throw ParseError(what + ".quat: non-unit quaternion");
  }
  return {p, q};
}

json write_pose(const Pose& p) {
  const auto& q = p.orientation;
  return {{"pos", {p.position.x(), p.position.y(), p.position.z()}},
          {"quat", {q.w(), q.x(), q.y(), q.z()}}};
}

JointSpec read_joint(const json& j, std::size_t index) {
  JointSpec spec;
  spec.name = j.value("name", "joint" + std::to_string(index));
  const std::string label = "joint " + std::to_string(index) + " ('" + spec.name + "')";
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "revolute") {
      spec.kind = JointKind::kRevolute;
    } else if (kind == "prismatic") {
      spec.kind = JointKind::kPrismatic;
    } else {
      throw ParseError(label + ": unknown kind '" + kind + "'");
    }
    spec.axis = read_vec3(j.at("axis"), label + ".axis");
    if (std::abs(spec.axis.norm() - 1.0) > 1e-9) throw ParseError(label + ": non-unit axis");
    spec.origin = j.contains("origin") ? read_pose(j.at("origin"), label + ".origin") : Pose::Identity();
    const json& lim = j.at("pos_limits");
    if (!lim.is_array() || lim.size() != 2) throw ParseError(label + ": pos_limits must be [lo, hi]");
    spec.lower = lim[0].get<double>();
    spec.upper = lim[1].get<double>();
    if (spec.lower > spec.upper) throw ParseError(label + ": lo > hi in pos_limits");
    spec.velocity_limit = j.at("vel_limit").get<double>();
    if (!(spec.velocity_limit > 0.0)) throw ParseError(label + ": vel_limit must be > 0");
  } catch (const json::exception& e) {
    throw ParseError(label + ": malformed field (" + e.what() + ")");
  }
  return spec;
}

}  // namespace

KinematicChain load_chain(std::string_view description) {
  json doc;
  try {
    doc = json::parse(description);
  } catch (const json::exception& e) {
    throw ParseError(std::string("chain description is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("joints") || !doc.at("joints").is_array()) {
    throw ParseError("chain description needs a 'joints' array");
  }
  std::vector<JointSpec> joints;
  std::size_t i = 0;
  for (const json& jj : doc.at("joints")) joints.push_back(read_joint(jj, i++));

  try {
    const std::string name = doc.value("name", "chain");
    const Pose ee = doc.contains("ee_offset") ? read_pose(doc.at("ee_offset"), "ee_offset") : Pose::Identity();
    const auto base = doc.at("base_joint_count").get<std::size_t>();
    return KinematicChain(name, std::move(joints), ee, base);
  } catch (const json::exception& e) {
    throw ParseError(std::string("chain description: malformed field (") + e.what() + ")");
  } catch (const ContractViolation& e) {
    throw ParseError(e.what());
  }
}

KinematicChain load_chain_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open chain file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_chain(ss.str());
}

std::string chain_to_json(const KinematicChain& chain) {
  json doc;
  doc["name"] = chain.name();
  doc["base_joint_count"] = chain.base_joint_count();
  doc["ee_offset"] = write_pose(chain.ee_offset());
  json joints = json::array();
  for (const JointSpec& j : chain.joints()) {
    joints.push_back({{"name", j.name},
                      {"kind", j.kind == JointKind::kRevolute ? "revolute" : "prismatic"},
                      {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
                      {"origin", write_pose(j.origin)},
                      {"pos_limits", {j.lower, j.upper}},
                      {"vel_limit", j.velocity_limit}});
  }
  doc["joints"] = std::move(joints);
  return doc.dump(2);
}

KinematicChain bundled_chain(std::string_view name) {
  for (const auto& [n, text] : detail::kBundledChains) {
    if (n == name) return load_chain(text);
  }
  throw ContractViolation("no bundled chain named '" + std::string(name) + "'");
}

std::vector<std::string> bundled_chain_names() {
  std::vector<std::string> names;
  for (const auto& entry : detail::kBundledChains) names.emplace_back(entry.first);
  return names;
}

}  // namespace dskill
