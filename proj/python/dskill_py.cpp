#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dskill/controller.hpp"
#include "dskill/errors.hpp"
#include "dskill/harness.hpp"
#include "dskill/ik.hpp"
#include "dskill/qp.hpp"
#include "dskill/rl.hpp"

namespace py = pybind11;
using namespace dskill;

namespace {

// Quaternions cross the boundary as [w, x, y, z].
Eigen::Vector4d quat_to_wxyz(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }
Eigen::Quaterniond wxyz_to_quat(const Eigen::Vector4d& v) { return {v[0], v[1], v[2], v[3]}; }

}  // namespace

PYBIND11_MODULE(dskill, m) {
  m.doc() = "Drawer-opening skills: kinematics, IK, QP control, SAC training and experiments";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](const Eigen::Vector3d& p, const Eigen::Vector4d& wxyz) { return Pose(p, wxyz_to_quat(wxyz)); }),
           py::arg("position"), py::arg("orientation"))
      .def_readwrite("position", &Pose::position)
      .def_property(
          "orientation", [](const Pose& p) { return quat_to_wxyz(p.orientation); },
          [](Pose& p, const Eigen::Vector4d& wxyz) { p.orientation = wxyz_to_quat(wxyz).normalized(); })
      .def("matrix", &Pose::matrix)
      .def("apply", &Pose::apply)
      .def("__repr__", [](const Pose& p) {
        const Eigen::Vector4d q = quat_to_wxyz(p.orientation);
        return py::str("Pose(position=[{}, {}, {}], orientation=[{}, {}, {}, {}])")
            .format(p.position.x(), p.position.y(), p.position.z(), q[0], q[1], q[2], q[3]);
      });
  m.def("compose", &compose);
  m.def("inverse", &inverse);
  m.def("pose_error", &pose_error, py::arg("current"), py::arg("target"));

  py::class_<KinematicChain>(m, "KinematicChain")
      .def_property_readonly("name", &KinematicChain::name)
      .def_property_readonly("dof", &KinematicChain::dof)
      .def_property_readonly("base_joint_count", &KinematicChain::base_joint_count)
      .def_property_readonly("lower_limits", &KinematicChain::lower_limits)
      .def_property_readonly("upper_limits", &KinematicChain::upper_limits)
      .def_property_readonly("velocity_limits", &KinematicChain::velocity_limits)
      .def("clamp", &KinematicChain::clamp)
      .def("within_limits", &KinematicChain::within_limits, py::arg("q"), py::arg("slack") = 0.0)
      .def("random_configuration", [](const KinematicChain& c, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return c.random_configuration(rng);
      })
      .def("to_json", [](const KinematicChain& c) { return chain_to_json(c); });
  m.def("bundled_chain", [](const std::string& name) { return bundled_chain(name); });
  m.def("bundled_chain_names", &bundled_chain_names);
  m.def("load_chain", [](const std::string& text) { return load_chain(text); });
  m.def("load_chain_file", &load_chain_file);
  m.def("forward_kinematics", py::overload_cast<const KinematicChain&, const Eigen::VectorXd&>(&forward_kinematics));
  m.def("jacobian", &jacobian);

  py::class_<IkOptions>(m, "IkOptions")
      .def(py::init<>())
      .def_readwrite("max_iterations", &IkOptions::max_iterations)
      .def_readwrite("position_tolerance", &IkOptions::position_tolerance)
      .def_readwrite("orientation_tolerance", &IkOptions::orientation_tolerance)
      .def_readwrite("damping", &IkOptions::damping)
      .def_readwrite("lock_base", &IkOptions::lock_base)
      .def_readwrite("restarts", &IkOptions::restarts)
      .def_readwrite("seed", &IkOptions::seed);
  py::class_<IkResult>(m, "IkResult")
      .def_readonly("z_res", &IkResult::z_res)
      .def_readonly("q_hat", &IkResult::q_hat)
      .def_readonly("iterations_used", &IkResult::iterations_used)
      .def_readonly("position_error", &IkResult::position_error)
      .def_readonly("orientation_error", &IkResult::orientation_error)
      .def_property_readonly("solved", &IkResult::solved);
  m.def("solve_ik", &solve_ik, py::arg("chain"), py::arg("q0"), py::arg("target"), py::arg("options") = IkOptions{});

  py::enum_<QpStatus>(m, "QpStatus")
      .value("OPTIMAL", QpStatus::kOptimal)
      .value("INFEASIBLE", QpStatus::kInfeasible)
      .value("MAX_ITER", QpStatus::kMaxIter);
  py::class_<QpProblem>(m, "QpProblem")
      .def(py::init([](Eigen::MatrixXd H, Eigen::MatrixXd A_eq, Eigen::VectorXd b_eq, Eigen::VectorXd lb,
                       Eigen::VectorXd ub) {
             return QpProblem{std::move(H), std::move(A_eq), std::move(b_eq), std::move(lb), std::move(ub)};
           }),
           py::arg("H"), py::arg("A_eq"), py::arg("b_eq"), py::arg("lb"), py::arg("ub"))
      .def_readwrite("H", &QpProblem::H)
      .def_readwrite("A_eq", &QpProblem::A_eq)
      .def_readwrite("b_eq", &QpProblem::b_eq)
      .def_readwrite("lb", &QpProblem::lb)
      .def_readwrite("ub", &QpProblem::ub);
  py::class_<QpSolution>(m, "QpSolution")
      .def_readonly("x", &QpSolution::x)
      .def_readonly("eq_multipliers", &QpSolution::eq_multipliers)
      .def_readonly("bound_multipliers", &QpSolution::bound_multipliers)
      .def_readonly("status", &QpSolution::status)
      .def_readonly("objective", &QpSolution::objective)
      .def_readonly("iterations", &QpSolution::iterations);
  m.def("solve_qp", [](const QpProblem& p, double tol, int max_iter) { return solve_qp(p, tol, max_iter); },
        py::arg("problem"), py::arg("tol") = 1e-10, py::arg("max_iter") = 200);
  m.def("kkt_residual", [](const QpProblem& p, const QpSolution& s) { return kkt_residuals(p, s).max(); });

  py::class_<ControllerConfig>(m, "ControllerConfig")
      .def(py::init<>())
      .def_readwrite("k", &ControllerConfig::k)
      .def_readwrite("omega1", &ControllerConfig::omega1)
      .def_readwrite("omega2", &ControllerConfig::omega2)
      .def_readwrite("dt", &ControllerConfig::dt)
      .def_readwrite("qdot_max", &ControllerConfig::qdot_max)
      .def_readwrite("respect_position_limits", &ControllerConfig::respect_position_limits)
      .def_readwrite("relaxed_penalty", &ControllerConfig::relaxed_penalty);
  py::class_<ControlStepTrace>(m, "ControlStepTrace")
      .def_readonly("desired_twist", &ControlStepTrace::desired_twist)
      .def_readonly("z_res", &ControlStepTrace::z_res)
      .def_readonly("c_base", &ControlStepTrace::c_base)
      .def_readonly("c_arm", &ControlStepTrace::c_arm)
      .def_readonly("relaxed", &ControlStepTrace::relaxed)
      .def_readonly("qdot_d", &ControlStepTrace::qdot_d);
  m.def("desired_ee_velocity", &desired_ee_velocity);
  m.def("build_cost_matrix", &build_cost_matrix);
  m.def("control_step", &control_step, py::arg("chain"), py::arg("q"), py::arg("x_h_next"), py::arg("probe_target"),
        py::arg("config") = ControllerConfig{});
  m.def("pseudoinverse_velocity", &pseudoinverse_velocity);

  py::enum_<AgentMode>(m, "AgentMode")
      .value("FLOATING_HAND", AgentMode::kFloatingHand)
      .value("WHOLE_ROBOT", AgentMode::kWholeRobot);
  py::class_<CabinetModel>(m, "CabinetModel")
      .def_readonly("id", &CabinetModel::id)
      .def_readonly("base_pose", &CabinetModel::base_pose)
      .def_readonly("drawer_axis", &CabinetModel::drawer_axis)
      .def_readonly("full_length", &CabinetModel::full_length)
      .def_readonly("handle_half_width", &CabinetModel::handle_half_width)
      .def_readonly("friction_resistance", &CabinetModel::friction_resistance)
      .def("handle_pose", &CabinetModel::handle_pose);
  m.def("sample_cabinet", [](std::uint64_t seed) { return sample_cabinet(seed); });
  m.def("sample_cabinets", [](std::uint64_t first, std::size_t count) { return sample_cabinets(first, count); });

  py::class_<WorldState>(m, "WorldState")
      .def_readonly("cabinet", &WorldState::cabinet)
      .def_readonly("drawer_extension", &WorldState::drawer_extension)
      .def_readonly("drawer_velocity", &WorldState::drawer_velocity)
      .def_readwrite("agent_q", &WorldState::agent_q)
      .def_readonly("agent_qdot", &WorldState::agent_qdot)
      .def_readonly("finger_positions", &WorldState::finger_positions)
      .def_readonly("grasp_attached", &WorldState::grasp_attached)
      .def_readonly("step_count", &WorldState::step_count);
  py::class_<StepResult>(m, "StepResult")
      .def_readonly("state", &StepResult::state)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_property_readonly("success", [](const StepResult& r) { return r.info.success; })
      .def_property_readonly("attached", [](const StepResult& r) { return r.info.attached; });
  py::class_<DrawerEnv>(m, "DrawerEnv")
      .def(py::init([](AgentMode mode) { return DrawerEnv(mode); }))
      .def_property_readonly("chain", &DrawerEnv::chain)
      .def_property_readonly("action_dim", &DrawerEnv::action_dim)
      .def_property_readonly("observation_dim", &DrawerEnv::observation_dim)
      .def("reset", &DrawerEnv::reset, py::arg("cabinet"), py::arg("seed"))
      .def("step", [](const DrawerEnv& env, const WorldState& s,
                      const Eigen::VectorXd& a) { return env.step(s, Action::FromVector(a)); })
      .def("observe", [](const DrawerEnv& env, const WorldState& s) { return env.observe(s); })
      .def("ee_pose", &DrawerEnv::ee_pose)
      .def("ee_handle_distance", &DrawerEnv::ee_handle_distance)
      .def("opening", &DrawerEnv::opening);

  py::class_<SacAgent>(m, "SacAgent")
      .def("act", [](const SacAgent& a, const Eigen::VectorXd& obs) { return deterministic_policy(a.actor)(obs); })
      .def_property_readonly("alpha", &SacAgent::alpha)
      .def("save", [](const SacAgent& a, const std::string& path) { save_checkpoint(path, a); });
  m.def("load_checkpoint", &load_checkpoint);
  m.def(
      "train",
      [](AgentMode mode, const std::vector<int>& cabinet_seeds, std::size_t budget, std::size_t warmup,
         std::uint64_t seed, const std::vector<int>& hidden, int batch_size, double target_entropy_scale,
         double lr) {
        TrainConfig cfg;
        cfg.mode = mode;
        cfg.budget = budget;
        cfg.warmup = warmup;
        cfg.eval_interval = budget;
        cfg.hyper.seed = seed;
        cfg.hyper.hidden = hidden;
        cfg.hyper.batch_size = batch_size;
        cfg.hyper.target_entropy_scale = target_entropy_scale;
        cfg.hyper.lr = lr;
        std::vector<CabinetModel> cabinets;
        for (int s : cabinet_seeds) cabinets.push_back(sample_cabinet(static_cast<std::uint64_t>(s)));
        py::gil_scoped_release release;
        return train(cfg, cabinets).agent;
      },
      py::arg("mode"), py::arg("cabinet_seeds"), py::arg("budget"), py::arg("warmup") = 5000, py::arg("seed") = 0,
      py::arg("hidden") = std::vector<int>{64, 64}, py::arg("batch_size") = 128,
      py::arg("target_entropy_scale") = 0.25, py::arg("lr") = 1e-3);
  m.def(
      "evaluate",
      [](const SacAgent& agent, AgentMode mode, const std::vector<int>& cabinet_seeds, int episodes, int seeds) {
        std::vector<CabinetModel> cabinets;
        for (int s : cabinet_seeds) cabinets.push_back(sample_cabinet(static_cast<std::uint64_t>(s)));
        const DrawerEnv env(mode);
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate(deterministic_policy(agent.actor), env, cabinets, episodes, seeds);
        }
        return py::make_tuple(r.success_rate, r.avg_length);
      },
      py::arg("agent"), py::arg("mode"), py::arg("cabinet_seeds"), py::arg("episodes") = 10, py::arg("seeds") = 1);

  m.def(
      "config_hash",
      [](const std::string& json_text, const std::string& base_dir) {
        return config_hash(load_experiment_config(json_text, base_dir));
      },
      py::arg("json_text"), py::arg("base_dir") = "");
  m.def(
      "run_experiment",
      [](const std::string& json_text, const std::string& base_dir) {
        const ExperimentConfig cfg = load_experiment_config(json_text, base_dir);
        py::gil_scoped_release release;
        return run_experiment(cfg).to_json();
      },
      py::arg("json_text"), py::arg("base_dir") = "",
      "Runs the configured experiment and returns its metrics report as JSON text. A relative "
      "cabinet_ranges file is resolved against base_dir.");
  m.attr("__version__") = code_version();
}
