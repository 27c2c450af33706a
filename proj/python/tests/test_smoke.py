import json
import os
import pathlib

import numpy as np
import pytest

import dskill

CONFIG_DIR = pathlib.Path(os.environ.get("DSKILL_CONFIG_DIR", pathlib.Path(__file__).resolve().parents[2] / "configs"))


def test_fk_jacobian_matches_finite_differences():
    chain = dskill.bundled_chain("mobile_franka")
    q = chain.random_configuration(3)
    jac = dskill.jacobian(chain, q)
    assert jac.shape == (6, chain.dof)
    h = 1e-6
    for i in range(chain.dof):
        dq = np.zeros(chain.dof)
        dq[i] = h
        plus = dskill.forward_kinematics(chain, q + dq)
        minus = dskill.forward_kinematics(chain, q - dq)
        np.testing.assert_allclose((plus.position - minus.position) / (2 * h), jac[:3, i], atol=1e-6)


def test_ik_reaches_fk_target():
    chain = dskill.bundled_chain("floating_hand")
    target = dskill.forward_kinematics(chain, chain.random_configuration(1))
    r = dskill.solve_ik(chain, chain.random_configuration(2), target)
    assert r.solved
    err = dskill.pose_error(dskill.forward_kinematics(chain, r.q_hat), target)
    assert np.linalg.norm(err[:3]) < 1e-4


def test_unreachable_target_reports_failure():
    chain = dskill.bundled_chain("mobile_franka")
    opts = dskill.IkOptions()
    opts.lock_base = True
    far = dskill.Pose([50.0, 0.0, 0.5], [1.0, 0.0, 0.0, 0.0])
    r = dskill.solve_ik(chain, np.zeros(chain.dof), far, opts)
    assert r.z_res == 0
    assert r.q_hat is None


def test_qp_box_and_equality():
    # min x'x  s.t.  x0 + x1 = 1,  0 <= x <= 0.3 on x0
    p = dskill.QpProblem(np.eye(2), np.array([[1.0, 1.0]]), np.array([1.0]), np.array([0.0, -5.0]), np.array([0.3, 5.0]))
    s = dskill.solve_qp(p)
    assert s.status == dskill.QpStatus.OPTIMAL
    np.testing.assert_allclose(s.x, [0.3, 0.7], atol=1e-10)
    assert dskill.kkt_residual(p, s) < 1e-8


def test_control_step_respects_bounds():
    chain = dskill.bundled_chain("mobile_franka")
    q = chain.clamp(np.zeros(chain.dof))
    x = dskill.forward_kinematics(chain, q)
    goal = dskill.Pose(x.position + np.array([0.01, 0.0, 0.0]), x.orientation)
    cfg = dskill.ControllerConfig()
    trace = dskill.control_step(chain, q, goal, goal, cfg)
    assert np.all(np.abs(trace.qdot_d) <= np.pi + 1e-9)
    assert trace.c_base + trace.c_arm == pytest.approx(cfg.omega1 + cfg.omega2)


def test_env_step_and_observation():
    env = dskill.DrawerEnv(dskill.AgentMode.FLOATING_HAND)
    cab = dskill.sample_cabinet(0)
    s = env.reset(cab, 0)
    assert env.observe(s).shape == (env.observation_dim,)
    r = env.step(s, np.zeros(env.action_dim))
    assert r.state.step_count == 1
    assert not r.done


def test_train_tiny_budget_and_checkpoint(tmp_path):
    agent = dskill.train(dskill.AgentMode.FLOATING_HAND, [0], budget=300, warmup=100, hidden=[16, 16], batch_size=16)
    path = tmp_path / "agent.json"
    agent.save(str(path))
    loaded = dskill.load_checkpoint(str(path))
    env = dskill.DrawerEnv(dskill.AgentMode.FLOATING_HAND)
    obs = env.observe(env.reset(dskill.sample_cabinet(0), 4))
    np.testing.assert_allclose(agent.act(obs), loaded.act(obs))
    success, length = dskill.evaluate(loaded, dskill.AgentMode.FLOATING_HAND, [0], episodes=1)
    assert 0.0 <= success <= 1.0
    assert 1 <= length <= 200


def test_config_hash_ignores_output_dir():
    text = (CONFIG_DIR / "smoke.json").read_text()
    cfg = json.loads(text)
    cfg["output_dir"] = "elsewhere"
    base = str(CONFIG_DIR)
    assert dskill.config_hash(text, base) == dskill.config_hash(json.dumps(cfg), base)
    cfg["cabinet_ranges"] = json.loads((CONFIG_DIR / cfg["cabinet_ranges"]).read_text())
    assert dskill.config_hash(json.dumps(cfg)) == dskill.config_hash(text, base)


def test_bad_config_raises():
    with pytest.raises(ValueError):
        dskill.config_hash('{"experiment": "training_size_sweep", "bogus": 1}')
