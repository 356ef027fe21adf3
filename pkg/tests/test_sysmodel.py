import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import linalg as sla

from privdetect import kernels
from privdetect.sysmodel import (
    DivergenceError,
    ModelError,
    Network,
    SubsystemModel,
    build_plan,
    decompose_interconnection,
    rollout,
    simulate,
    sinusoidal_ramp_attack,
)


def _node(i, A, nbrs=(), n=None, sw=0.0, sv=1.0, sx=0.0):
    A = np.atleast_2d(A)
    n = A.shape[0]
    return SubsystemModel(id=i, A=A, B=np.ones((n, 1)), C=np.eye(n), neighbors=list(nbrs),
                          sigma_w=sw * np.eye(n), sigma_v=sv * np.eye(n), sigma_x0=sx * np.eye(n))


def test_decomposition_pendulum_coupling(pendulum):
    net, _ = pendulum
    c = net[2].coupling(3)[1, 0]
    d = decompose_interconnection([np.array([[0.0, 0.0], [c, 0.0]])])
    assert d.g == 1
    assert np.allclose(np.abs(d.G[:, 0]), [0.0, 1.0], atol=1e-15)
    assert np.allclose(d.G @ d.Ebar, [[0.0, 0.0], [c, 0.0]], atol=1e-12)
    assert np.allclose(np.abs(d.Ebar), [[abs(c), 0.0]], atol=1e-12)


def test_decomposition_identity():
    d = decompose_interconnection([np.eye(2)])
    assert d.g == 2
    assert np.allclose(d.G.T @ d.G, np.eye(2), atol=1e-14)
    assert np.allclose(d.G @ d.Ebar, np.eye(2), atol=1e-14)


def test_decomposition_zero():
    with pytest.raises(ModelError, match="degenerate coupling"):
        decompose_interconnection([np.zeros((2, 2))])


def test_decomposition_unknown_input_condition():
    with pytest.raises(ModelError, match="unknown-input condition failed"):
        decompose_interconnection([np.array([[0.0, 0.0], [1.0, 0.0]])], C=np.array([[1.0, 0.0]]))


def test_decomposition_invariants_random(rng):
    for _ in range(20):
        E = rng.standard_normal((4, 2)) @ rng.standard_normal((2, 6))
        d = decompose_interconnection(E)
        assert d.g == 2
        assert np.allclose(d.G.T @ d.G, np.eye(d.g), atol=1e-12)
        assert np.linalg.norm(d.G @ d.Ebar - E) <= 1e-10 * max(1.0, np.linalg.norm(E))


def test_pendulum_network_decompositions(pendulum):
    net, _ = pendulum
    for mdl in net:
        d = net.decomposition(mdl.id)
        assert np.linalg.norm(d.G @ d.Ebar - mdl.E) <= 1e-10 * max(1.0, np.linalg.norm(mdl.E))
        assert np.linalg.matrix_rank(mdl.C @ d.G) == d.g


def test_model_validation():
    with pytest.raises(ModelError):
        _node(0, np.eye(2), sv=0.0)
    with pytest.raises(ModelError):
        SubsystemModel(0, np.eye(2), np.ones((2, 1)), np.eye(2), [], np.array([[1.0, 0.5], [0.0, 1.0]]),
                       np.eye(2), np.eye(2))
    with pytest.raises(ModelError):
        Network([_node(0, np.eye(2), [(5, np.eye(2))])], {0: np.zeros((1, 2))})


def test_attacker_state_zero_before_start(pendulum):
    net, _ = pendulum
    atk = sinusoidal_ramp_attack(3)
    xa = atk.attacker_states(net[3], 300)
    assert atk.k_start == 100
    assert np.all(xa[: atk.k_start + 1] == 0.0)
    assert np.any(xa[atk.k_start + 2] != 0.0)


def test_attack_signal_formula():
    atk = sinusoidal_ramp_attack(3)
    k = 250
    t = k * 0.01
    expect = 3.0 * (1 - np.exp(-0.3 * (t - 1.0))) * np.sin(2.0 / 30.0 * np.pi * t)
    assert atk.signal(k, 1)[0] == pytest.approx(expect, rel=1e-14)
    assert atk.signal(50, 1)[0] == 0.0


def test_zero_trajectory():
    nodes = [_node(0, 0.9 * np.eye(2), [(1, 0.1 * np.eye(2))]), _node(1, 0.8 * np.eye(2), [(0, 0.1 * np.eye(2))])]
    nodes = [n.replace(sigma_v=1e-300 * np.eye(2)) for n in nodes]
    net = Network(nodes, {0: np.zeros((1, 2)), 1: np.zeros((1, 2))})
    plan = build_plan(net)
    plan.Lv[:] = 0.0
    out = rollout(plan, 1, 20)
    for key in ("x", "y", "u", "z", "r"):
        assert np.all(out[key] == 0.0)


def test_lyapunov_covariance():
    A = np.array([[0.6, 0.3], [-0.2, 0.5]])
    Sw = np.array([[1.0, 0.3], [0.3, 0.5]])
    mdl = SubsystemModel(0, A, np.ones((2, 1)), np.eye(2), [], Sw, np.eye(2), np.eye(2))
    net = Network([mdl], {0: np.zeros((1, 2))})
    out = rollout(build_plan(net), 1, 100_000, seed=3, keep={"x": None})
    emp = np.cov(out["x"][0].T)
    ana = sla.solve_discrete_lyapunov(A, Sw)
    assert np.all(np.abs(emp - ana) <= 0.05 * np.abs(ana))


def test_simulate_deterministic(pendulum):
    net, gains = pendulum
    atk = sinusoidal_ramp_attack(3)
    a = simulate(net, attacks=[atk], steps=200, seed=5, gains=gains)
    b = simulate(net, attacks=[atk], steps=200, seed=5, gains=gains)
    c = simulate(net, attacks=[atk], steps=200, seed=6, gains=gains)
    for i in net.ids:
        assert np.array_equal(a.states[i], b.states[i])
        assert np.array_equal(a.measurements[i], b.measurements[i])
    assert not np.array_equal(a.states[1], c.states[1])


def test_covert_attack_hides_measurements(pendulum):
    # on an isolated node the output injection cancels the attacker's state exactly in y
    net, _ = pendulum
    mdl = net[3].replace(neighbors=[])
    iso = Network([mdl], {3: net.controllers[3]})
    atk = sinusoidal_ramp_attack(3)
    plan = build_plan(iso, None, None, [atk])
    a = rollout(plan, 4, 180, seed=1)
    b = rollout(build_plan(iso), 4, 180, seed=1)
    xa = atk.attacker_states(mdl, 180)[1:]
    assert np.abs(xa).max() > 1.0
    assert np.allclose(a["x"] - b["x"], xa, atol=1e-9)
    assert np.allclose(a["y"], b["y"], atol=1e-9)
    assert np.allclose(a["u"], b["u"], atol=1e-9)


def test_divergence_reported():
    mdl = _node(0, 3.0 * np.eye(1), sw=1.0, sx=1.0)
    net = Network([mdl], {0: np.zeros((1, 1))})
    with pytest.raises(DivergenceError, match="trajectory diverged at step"):
        rollout(build_plan(net), 2, 200)


def test_blocking_does_not_change_results(pendulum):
    net, gains = pendulum
    plan = build_plan(net, gains)
    a = rollout(plan, 50, 30, [10, 30], seed=2, block_size=20)
    b = rollout(plan, 50, 30, [10, 30], seed=2, block_size=20)
    assert np.array_equal(a["z"], b["z"])


def test_backends_agree(pendulum):
    if not kernels.HAS_NUMBA:
        pytest.skip("numba not installed")
    net, gains = pendulum
    plan = build_plan(net, gains, None, [sinusoidal_ramp_attack(3)])
    a = rollout(plan, 200, 150, [1, 75, 150], seed=9, backend="numba")
    b = rollout(plan, 200, 150, [1, 75, 150], seed=9, backend="numpy")
    for key in ("z", "r", "x", "y", "u"):
        assert np.allclose(a[key], b[key], rtol=1e-12, atol=1e-14)


def test_backend_env_switch():
    code = "import privdetect; print(privdetect.BACKEND)"
    env = dict(os.environ, PRIVDETECT_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["PRIVDETECT_BACKEND"] = "bogus"
    bad = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert bad.returncode != 0


def test_network_json_round_trip(pendulum, tmp_path):
    net, _ = pendulum
    path = tmp_path / "net.json"
    path.write_text(json.dumps(net.to_dict()))
    back = Network.from_json(path)
    assert back.ids == net.ids
    for mdl in net:
        other = back[mdl.id]
        assert np.array_equal(other.A, mdl.A) and np.array_equal(other.E, mdl.E)
        assert np.array_equal(back.controllers[mdl.id], net.controllers[mdl.id])


def test_network_json_malformed():
    with pytest.raises(ModelError, match="malformed"):
        Network.from_dict({"nodes": [{"id": 0}]})


def test_trajectory_csv(pendulum, tmp_path):
    net, gains = pendulum
    traj = simulate(net, steps=5, seed=1, gains=gains)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "step,node,x0,x1,y0,y1"
    assert len(rows) == 1 + 6 * 4
    step, node, *vals = rows[5].split(",")
    assert (int(step), int(node)) == (1, 1)
    assert np.allclose([float(v) for v in vals[:2]], traj.states[1][1], rtol=5e-9)


def test_closed_loop_stable(pendulum):
    net, _ = pendulum
    assert np.abs(np.linalg.eigvals(net.closed_loop_matrix())).max() < 1.0
