import numpy as np
import pytest

from privdetect.sysmodel import ModelError, SubsystemModel, decompose_interconnection
from privdetect.umv_filter import (
    FilterDesignError,
    FilterGains,
    FilterState,
    design_gains,
    filter_step,
    spectral_radius,
    steady_state_error_cov,
)


def _node(sw=None, sv=None):
    A = np.array([[0.9, 0.2], [-0.1, 0.7]])
    C = np.array([[1.0, 0.2], [0.1, 1.0]])
    Aij = np.array([[0.3, 0.1], [0.6, 0.2]])  # rank one
    sw = np.array([[1.0, 0.5], [0.5, 2.0]]) * 1e-2 if sw is None else sw
    sv = np.array([[1.0, 0.3], [0.3, 0.5]]) * 1e-2 if sv is None else sv
    return SubsystemModel(0, A, np.array([[0.0], [1.0]]), C, [(1, Aij)], sw, sv, np.eye(2))


def _fixed_point_residual(g, mdl, S):
    R = g.Ahat @ S @ g.Ahat.T + g.Abar @ mdl.sigma_w @ g.Abar.T + g.Lbar @ mdl.sigma_v @ g.Lbar.T - S
    return np.abs(R).max()


def test_pendulum_node2_gains(pendulum):
    net, gains = pendulum
    g, mdl = gains[2], net[2]
    assert np.allclose(g.M @ mdl.C @ g.G, np.eye(g.g), atol=1e-10)
    assert spectral_radius(g.Ahat) < 1 - 1e-9
    S = g.sigma_e_ss
    assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() >= 0
    assert _fixed_point_residual(g, mdl, S) <= 1e-9


def test_all_pendulum_nodes_invariants(pendulum):
    net, gains = pendulum
    for mdl in net:
        g = gains[mdl.id]
        assert np.allclose(g.M @ mdl.C @ g.G, np.eye(g.g), atol=1e-10)
        assert np.allclose(g.Lbar, g.K + (np.eye(2) - g.K @ mdl.C) @ g.G @ g.M, atol=1e-12)
        assert np.allclose(g.Abar, np.eye(2) - g.Lbar @ mdl.C, atol=1e-12)
        assert np.allclose(g.Ahat, g.Abar @ mdl.A, atol=1e-12)
        assert spectral_radius(g.Ahat) < 1 - 1e-9


def test_full_state_unknown_input_weighted_pinv():
    mdl = SubsystemModel(0, 0.8 * np.eye(2), np.ones((2, 1)), np.eye(2), [(1, np.array([[1.0, 0.2], [0.3, 1.0]]))],
                         1e-3 * np.eye(2), 1e-3 * np.eye(2), np.eye(2))
    g = design_gains(mdl)
    assert g.g == 2
    assert np.allclose(g.M, np.linalg.pinv(mdl.C @ g.G), atol=1e-10)
    assert np.allclose(g.Ahat, 0.0, atol=1e-10)


def test_assumption_one_violation():
    mdl = SubsystemModel(0, 0.8 * np.eye(2), np.ones((2, 1)), np.array([[1.0, 0.0]]),
                         [(1, np.array([[0.0], [1.0]]))], 1e-3 * np.eye(2), 1e-3 * np.eye(1), np.eye(2))
    with pytest.raises(ModelError, match="Assumption 1"):
        design_gains(mdl)


def test_uncontrollable_noise_rejected():
    mdl = _node(sw=np.zeros((2, 2)))
    with pytest.raises(FilterDesignError, match="controllable"):
        design_gains(mdl)


def test_filter_step_zero():
    g = design_gains(_node())
    st, xi, xp = filter_step(g, FilterState.zero(g), np.zeros(1), np.zeros(2))
    assert not np.any(st.x_hat) and not np.any(xi) and not np.any(xp)


def test_filter_step_dimension_check():
    g = design_gains(_node())
    with pytest.raises(ValueError):
        filter_step(g, FilterState.zero(g), np.zeros(1), np.zeros(3))


def _noiseless_run(g, mdl, steps, rng):
    x = rng.standard_normal(2)
    st = FilterState.zero(g)
    errs, xi_err = [], []
    for k in range(steps):
        u = np.array([np.sin(0.1 * k)])
        xi = np.array([np.cos(0.07 * k) + 0.5])
        x = mdl.A @ x + mdl.B @ u + g.G @ xi
        st, xi_hat, _ = filter_step(g, st, u, mdl.C @ x)
        errs.append(np.linalg.norm(x - st.x_hat))
        xi_err.append(abs(xi_hat[0] - xi[0]))
    return np.array(errs), np.array(xi_err)


def test_noiseless_error_decays_at_filter_rate(rng):
    mdl = _node()
    g = design_gains(mdl)
    errs, _ = _noiseless_run(g, mdl, 60, rng)
    rho = spectral_radius(g.Ahat)
    ks = np.arange(5, 25)
    rate = np.exp(np.polyfit(ks, np.log(errs[ks]), 1)[0])
    assert rate <= rho + 0.05
    assert errs[-1] < 1e-10 * max(1.0, errs[0]) or errs[-1] < 1e-12


def test_xi_recovery(rng):
    mdl = _node()
    g = design_gains(mdl)
    _, xi_err = _noiseless_run(g, mdl, 80, rng)
    assert xi_err[40:].max() <= 1e-8


def test_error_covariance_matches_monte_carlo():
    mdl = _node()
    g = design_gains(mdl)
    rng = np.random.default_rng(4)
    Lw, Lv = np.linalg.cholesky(mdl.sigma_w), np.linalg.cholesky(mdl.sigma_v)
    steps = 100_000
    W = rng.standard_normal((steps, 2)) @ Lw.T
    V = rng.standard_normal((steps, 2)) @ Lv.T
    x = np.linalg.cholesky(g.sigma_e_ss) @ rng.standard_normal(2)
    st = FilterState.zero(g)
    errs = np.empty((steps, 2))
    for k in range(steps):
        u = np.array([0.3 * np.sin(0.01 * k)])
        x = mdl.A @ x + mdl.B @ u + g.G @ np.array([np.sin(0.02 * k)]) + W[k]
        st, _, _ = filter_step(g, st, u, mdl.C @ x + V[k])
        errs[k] = x - st.x_hat
    emp = np.cov(errs.T)
    S = g.sigma_e_ss
    assert np.abs(S).min() > 0.05 * np.abs(S).max()
    assert np.all(np.abs(emp - S) <= 0.05 * np.abs(S))


def test_unbiased_error_mean():
    mdl = _node()
    g = design_gains(mdl)
    rng = np.random.default_rng(11)
    trials, steps = 10_000, 20
    Lw, Lv = np.linalg.cholesky(mdl.sigma_w), np.linalg.cholesky(mdl.sigma_v)
    x = rng.standard_normal((trials, 2)) @ np.linalg.cholesky(g.sigma_e_ss).T
    xh = np.zeros((trials, 2))
    for k in range(steps):
        u = np.array([np.sin(0.3 * k)])
        xi = np.array([2.0 * np.cos(0.2 * k)])
        pred = xh @ mdl.A.T + u @ mdl.B.T
        x = x @ mdl.A.T + u @ mdl.B.T + xi @ g.G.T + rng.standard_normal((trials, 2)) @ Lw.T
        y = x @ mdl.C.T + rng.standard_normal((trials, 2)) @ Lv.T
        xh = pred @ g.Abar.T + y @ g.Lbar.T
        e = x - xh
        se = e.std(axis=0, ddof=1) / np.sqrt(trials)
        assert np.all(np.abs(e.mean(axis=0)) <= 3 * se)


def test_steady_state_noise_free():
    g = design_gains(_node())
    S = steady_state_error_cov(g, sigma_w=np.zeros((2, 2)), sigma_v=np.zeros((2, 2)))
    assert np.all(S == 0.0)


def test_steady_state_scalar_closed_form():
    a, q = 0.6, 0.3
    g = FilterGains(M=np.eye(1), K=np.zeros((1, 1)), Lbar=np.zeros((1, 1)), Abar=np.eye(1), Ahat=np.array([[a]]),
                    sigma_e_ss=np.zeros((1, 1)), A=np.array([[a]]), B=np.zeros((1, 1)), C=np.eye(1), G=np.eye(1))
    S = steady_state_error_cov(g, sigma_w=np.array([[q]]), sigma_v=np.zeros((1, 1)))
    assert S[0, 0] == pytest.approx(q / (1 - a * a), rel=1e-12)


def test_steady_state_start_invariance():
    mdl = _node()
    g = design_gains(mdl)
    a = steady_state_error_cov(g, mdl)
    b = steady_state_error_cov(g, mdl, start=np.eye(2))
    assert np.allclose(a, b, rtol=1e-10, atol=1e-14)


def test_gains_json_round_trip(tmp_path):
    g = design_gains(_node())
    path = tmp_path / "g.json"
    g.to_json(path)
    import json

    back = FilterGains.from_dict(json.loads(path.read_text()))
    for k in ("M", "K", "Lbar", "Abar", "Ahat", "sigma_e_ss"):
        assert np.array_equal(getattr(back, k), getattr(g, k))


def test_decomposition_argument_equivalent():
    mdl = _node()
    a = design_gains(mdl)
    b = design_gains(mdl, decompose_interconnection([Aij for _, Aij in mdl.neighbors], mdl.C))
    assert np.array_equal(a.Lbar, b.Lbar)
