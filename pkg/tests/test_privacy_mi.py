import math

import numpy as np
import pytest

from privdetect.privacy_mi import (
    MAX_STACKED_DIM,
    DegenerateJointError,
    JointCovariance,
    block_toeplitz,
    build_stacked,
    joint_covariance,
    mutual_information,
)
from privdetect.sysmodel import Decomposition, SubsystemModel
from privdetect.umv_filter import design_gains

from conftest import random_spd


def _scalar_model(a=0.7, sw=0.1, sv=0.2):
    return SubsystemModel(0, [[a]], [[1.0]], [[1.0]], [(1, [[0.5]])], [[sw]], [[sv]], [[1.0]])


def test_stacked_k1(pendulum):
    net, gains = pendulum
    ops = build_stacked(net[2], gains[2], 1)
    assert np.array_equal(ops.Theta, net[2].A)
    assert np.array_equal(ops.Psi_w, np.eye(2))
    assert np.array_equal(ops.Theta_hat, gains[2].Ahat)


def test_stacked_k2_scalar():
    mdl = _scalar_model(a=0.7)
    ops = build_stacked(mdl, design_gains(mdl), 2)
    assert np.allclose(ops.Psi_w, [[1.0, 0.0], [0.7, 1.0]])


def test_stacked_k3_unrolled(pendulum, rng):
    # x(k) = A^k x0 + sum_t A^(k-t) (B u(t-1) + G xi(t-1) + w(t-1))
    net, gains = pendulum
    mdl, g = net[2], gains[2]
    K = 3
    ops = build_stacked(mdl, g, K)
    x0 = rng.standard_normal(2)
    u = rng.standard_normal((K, 1))
    xi = rng.standard_normal((K, g.g))
    w = rng.standard_normal((K, 2))
    x, xs = x0, []
    for k in range(K):
        x = mdl.A @ x + mdl.B @ u[k] + g.G @ xi[k] + w[k]
        xs.append(x)
    stacked = ops.Theta @ x0 + ops.Psi_u @ u.ravel() + ops.Psi_xi @ xi.ravel() + ops.Psi_w @ w.ravel()
    assert np.allclose(stacked, np.concatenate(xs), atol=1e-13)
    # estimation error e(k) = Ahat e(k-1) + Abar w(k-1) - Lbar v(k)
    v = rng.standard_normal((K, 2))
    e, es = x0, []
    for k in range(K):
        e = g.Ahat @ e + g.Abar @ w[k] - g.Lbar @ v[k]
        es.append(e)
    st = ops.Theta_hat @ x0 + ops.Psi_hat_w @ w.ravel() - ops.Psi_hat_v @ v.ravel()
    assert np.allclose(st, np.concatenate(es), atol=1e-13)


def test_block_toeplitz_structure():
    A = np.array([[0.5, 1.0], [0.0, 0.3]])
    P = [np.eye(2), A, A @ A]
    Xi = np.array([[1.0], [2.0]])
    T = block_toeplitz(P, Xi, 3)
    assert np.allclose(T[4:6, 0:1], A @ A @ Xi)
    assert np.all(T[0:2, 1:3] == 0.0)


def test_horizon_errors(pendulum):
    net, gains = pendulum
    with pytest.raises(ValueError):
        build_stacked(net[2], gains[2], 0)
    with pytest.raises(ValueError, match="horizon too long"):
        build_stacked(net[2], gains[2], MAX_STACKED_DIM // 2 + 1)


def test_joint_covariance_shapes_and_psd(pendulum, rng):
    net, gains = pendulum
    mdl, g = net[3], gains[3]
    jc = joint_covariance(build_stacked(mdl, g, 5), mdl, g, random_spd(rng, 2, 1e-3))
    J = jc.joint()
    assert J.shape == (20, 20)
    assert np.allclose(jc.sigma_x, jc.sigma_x.T) and np.allclose(jc.sigma_theta, jc.sigma_theta.T)
    assert np.linalg.eigvalsh(jc.sigma_theta).min() > 0
    assert np.linalg.eigvalsh(J).min() >= -1e-8 * np.abs(J).max()


def test_noise_free_limit(pendulum):
    net, gains = pendulum
    g = gains[2]
    tiny = net[2].replace(sigma_w=np.zeros((2, 2)), sigma_v=1e-30 * np.eye(2), sigma_x0=np.zeros((2, 2)))
    sa = np.array([[2.0, 0.3], [0.3, 1.0]])
    jc = joint_covariance(build_stacked(tiny, g, 3), tiny, g, sa, sigma_e=np.zeros((2, 2)))
    assert np.abs(jc.sigma_x).max() == 0.0
    assert np.abs(jc.sigma_xtheta).max() == 0.0
    assert np.allclose(jc.sigma_theta, np.kron(np.eye(3), sa), atol=1e-25)


def test_mi_independent_blocks():
    jc = JointCovariance(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2), 1)
    assert mutual_information(jc) == 0.0


def test_mi_bivariate_closed_form():
    rho = 0.6
    jc = JointCovariance(np.eye(1), np.eye(1), np.array([[rho]]), np.eye(1), 1)
    assert mutual_information(jc) == pytest.approx(-0.5 * math.log(1 - rho * rho), abs=1e-14)
    assert mutual_information(jc) == pytest.approx(0.2231, abs=1e-4)


def test_mi_degenerate():
    jc = JointCovariance(np.eye(1), np.eye(1), np.array([[1.0]]), np.eye(1), 1)
    with pytest.raises(DegenerateJointError, match="degenerate joint distribution"):
        mutual_information(jc)


def test_mi_nonincreasing_in_scale(pendulum, rng):
    net, gains = pendulum
    mdl, g = net[3], gains[3]
    base = joint_covariance(build_stacked(mdl, g, 5), mdl, g)
    S = random_spd(rng, 2, 1e-3)
    vals = [mutual_information(base.with_alpha(s * S)) for s in (0.25, 1, 4, 16, 64)]
    assert all(v >= 0 for v in vals)
    assert np.all(np.diff(vals) <= 0)


def test_mi_psd_order_random_pairs(pendulum, rng):
    net, gains = pendulum
    mdl, g = net[1], gains[1]
    base = joint_covariance(build_stacked(mdl, g, 5), mdl, g)
    for _ in range(50):
        b = random_spd(rng, 2, 10 ** rng.uniform(-5, -1))
        a = b + random_spd(rng, 2, 10 ** rng.uniform(-5, -1))
        assert mutual_information(base.with_alpha(a)) <= mutual_information(base.with_alpha(b)) + 1e-10


def test_mi_factorization_invariance(pendulum, rng):
    net, gains = pendulum
    mdl = net[2]
    d = net.decomposition(2)
    Q, _ = np.linalg.qr(rng.standard_normal((d.g, d.g)))
    alt = design_gains(mdl, Decomposition(d.E, 3.0 * d.G @ Q, Q.T @ d.Ebar / 3.0, d.g))
    sa = random_spd(rng, 2, 1e-3)
    a = mutual_information(joint_covariance(build_stacked(mdl, gains[2], 5), mdl, gains[2], sa))
    b = mutual_information(joint_covariance(build_stacked(mdl, alt, 5), mdl, alt, sa))
    assert abs(a - b) <= 1e-9


def test_sigma_alpha_shape_checked(pendulum):
    net, gains = pendulum
    ops = build_stacked(net[2], gains[2], 2)
    with pytest.raises(ValueError):
        joint_covariance(ops, net[2], gains[2], np.eye(3))
