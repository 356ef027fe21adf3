"""Mutual information between a node's state trajectory and its noisy broadcasts.

Over a horizon of K steps the transmitting node's stacked state and the
stacked messages theta = x^ + alpha are jointly Gaussian. Inputs, the
coupling term and any attack only shift the means, so the covariances below
depend on the noise statistics, the filter and the privacy covariance alone.
The filter is assumed to start in steady state, and the initial estimation
error is the initial state itself (x^(0) = 0), so E[x(0) e(0)'] = Sigma_x0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAX_STACKED_DIM",
    "StackedOperators",
    "JointCovariance",
    "build_stacked",
    "block_toeplitz",
    "joint_covariance",
    "mutual_information",
    "DegenerateJointError",
]

MAX_STACKED_DIM = 2000


class DegenerateJointError(ArithmeticError):
    pass


def _powers(A, K):
    out = [np.eye(A.shape[0])]
    for _ in range(K):
        out.append(A @ out[-1])
    return out


def block_toeplitz(powers, Xi, K):
    """Block-lower-triangular map with block (s, t) = A^(s-t) Xi for s >= t."""
    n = powers[0].shape[0]
    c = Xi.shape[1]
    out = np.zeros((K * n, K * c))
    for s in range(K):
        for t in range(s + 1):
            out[s * n:(s + 1) * n, t * c:(t + 1) * c] = powers[s - t] @ Xi
    return out


@dataclass(frozen=True)
class StackedOperators:
    K: int
    Theta: np.ndarray
    Theta_hat: np.ndarray
    Psi_u: np.ndarray
    Psi_xi: np.ndarray
    Psi_w: np.ndarray
    Psi_hat_w: np.ndarray
    Psi_hat_v: np.ndarray


def build_stacked(model, gains, K: int) -> StackedOperators:
    if int(K) != K or K < 1:
        raise ValueError("horizon K must be a positive integer")
    K = int(K)
    n = model.n
    if K * n > MAX_STACKED_DIM:
        raise ValueError(f"horizon too long: K*n = {K * n} exceeds {MAX_STACKED_DIM}")
    Ap = _powers(model.A, K)
    Ahp = _powers(gains.Ahat, K)
    return StackedOperators(
        K=K,
        Theta=np.vstack(Ap[1:]),
        Theta_hat=np.vstack(Ahp[1:]),
        Psi_u=block_toeplitz(Ap, model.B, K),
        Psi_xi=block_toeplitz(Ap, gains.G, K),
        Psi_w=block_toeplitz(Ap, np.eye(n), K),
        Psi_hat_w=block_toeplitz(Ahp, gains.Abar, K),
        Psi_hat_v=block_toeplitz(Ahp, gains.Lbar, K),
    )


@dataclass(frozen=True)
class JointCovariance:
    sigma_x: np.ndarray
    sigma_theta: np.ndarray
    sigma_xtheta: np.ndarray
    sigma_theta_base: np.ndarray
    K: int

    def joint(self):
        return np.block([[self.sigma_x, self.sigma_xtheta], [self.sigma_xtheta.T, self.sigma_theta]])

    def with_alpha(self, sigma_alpha):
        sa = np.asarray(sigma_alpha, dtype=float)
        st = self.sigma_theta_base + np.kron(np.eye(self.K), sa)
        return JointCovariance(self.sigma_x, 0.5 * (st + st.T), self.sigma_xtheta, self.sigma_theta_base, self.K)


def _kron_eye(K, S):
    return np.kron(np.eye(K), S)


def joint_covariance(ops: StackedOperators, model, gains, sigma_alpha=None, sigma_e=None) -> JointCovariance:
    """Covariances of the stacked state x(1..K), the stacked messages theta(1..K) and their cross term.

    ``sigma_e`` overrides the initial estimation error covariance (default:
    the filter's steady-state value).
    """
    K = ops.K
    Sx0 = model.sigma_x0
    Se = gains.sigma_e_ss if sigma_e is None else np.asarray(sigma_e, dtype=float)
    Sw = _kron_eye(K, model.sigma_w)
    Sv = _kron_eye(K, model.sigma_v)
    Th, Thh = ops.Theta, ops.Theta_hat
    Pw, Dw = ops.Psi_w, ops.Psi_w - ops.Psi_hat_w
    Pv = ops.Psi_hat_v
    TSx = Th @ Sx0
    sx = TSx @ Th.T + Pw @ Sw @ Pw.T
    cross0 = TSx @ Thh.T
    st = (TSx @ Th.T + Thh @ Se @ Thh.T - cross0 - cross0.T
          + Dw @ Sw @ Dw.T + Pv @ Sv @ Pv.T)
    sxt = TSx @ Th.T - cross0 + Pw @ Sw @ Dw.T
    sx = 0.5 * (sx + sx.T)
    st = 0.5 * (st + st.T)
    jc = JointCovariance(sx, st, sxt, st, K)
    if sigma_alpha is None:
        return jc
    sa = np.asarray(sigma_alpha, dtype=float)
    if sa.shape != (model.n, model.n):
        raise ValueError("sigma_alpha has the wrong shape")
    return jc.with_alpha(sa)


def _logdet_chol(S, what):
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise DegenerateJointError(f"degenerate joint distribution: {what} is not positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(L)))), L


def schur_parts(jc: JointCovariance):
    """Cholesky factors and Sigma_theta^-1 Sigma_xtheta' used by the MI and its gradient."""
    try:
        Lt = np.linalg.cholesky(jc.sigma_theta)
    except np.linalg.LinAlgError:
        raise DegenerateJointError("degenerate joint distribution: sigma_theta is not positive definite") from None
    Y = np.linalg.solve(Lt, jc.sigma_xtheta.T)
    D = jc.sigma_x - Y.T @ Y
    D = 0.5 * (D + D.T)
    return Lt, Y, D


def mutual_information(jc: JointCovariance) -> float:
    """0.5 [log det Sigma_x - log det(Sigma_x - Sigma_xtheta Sigma_theta^-1 Sigma_xtheta')] in nats."""
    ld_x, _ = _logdet_chol(jc.sigma_x, "sigma_x")
    _, _, D = schur_parts(jc)
    ld_d, _ = _logdet_chol(D, "the Schur complement")
    return max(0.0, 0.5 * (ld_x - ld_d))
