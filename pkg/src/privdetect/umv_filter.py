"""Unbiased minimum-variance filter with unknown input.

Each node treats the neighbor coupling G xi as an unknown input. The filter

    x^(k)      = Abar (A x^(k-1) + B u(k-1)) + Lbar y(k)
    xi^(k-1)   = M (y(k) - C (A x^(k-1) + B u(k-1)))

with Lbar = K + (I - K C) G M and Abar = I - Lbar C is unbiased whenever
M C G = I, since then Abar G = 0 and xi drops out of the error recursion
e(k) = Ahat e(k-1) + Abar w(k-1) - Lbar v(k), Ahat = Abar A.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .sysmodel import Decomposition, ModelError, SubsystemModel, decompose_interconnection

__all__ = [
    "FilterDesignError",
    "FilterGains",
    "FilterState",
    "design_gains",
    "filter_step",
    "steady_state_error_cov",
    "spectral_radius",
]

MAX_ITER = 10_000
FIXED_POINT_TOL = 1e-12


class FilterDesignError(ArithmeticError):
    pass


def spectral_radius(A):
    A = np.atleast_2d(A)
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


@dataclass(frozen=True)
class FilterGains:
    M: np.ndarray
    K: np.ndarray
    Lbar: np.ndarray
    Abar: np.ndarray
    Ahat: np.ndarray
    sigma_e_ss: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    iterations: int = 0

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def g(self):
        return self.G.shape[1]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("M", "K", "Lbar", "Abar", "Ahat", "sigma_e_ss", "A", "B", "C", "G")} | {
            "iterations": self.iterations}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, doc):
        kw = {k: np.array(doc[k], dtype=float, ndmin=2) for k in
              ("M", "K", "Lbar", "Abar", "Ahat", "sigma_e_ss", "A", "B", "C", "G")}
        return cls(iterations=int(doc.get("iterations", 0)), **kw)


@dataclass
class FilterState:
    x_hat: np.ndarray
    xi_hat_prev: np.ndarray

    @classmethod
    def zero(cls, gains: FilterGains):
        return cls(np.zeros(gains.n), np.zeros(gains.g))


def _controllable(A, S, tol=1e-10):
    n = A.shape[0]
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    blocks, cur = [], root
    for _ in range(n):
        blocks.append(cur)
        cur = A @ cur
    Wc = np.hstack(blocks)
    s = np.linalg.svd(Wc, compute_uv=False)
    return s.size > 0 and s[0] > 0 and int(np.sum(s > tol * s[0])) == n


def _gains_from_prior(A, C, G, Pm, Sv):
    """One UMV gain update from the one-step prior covariance Pm."""
    n = A.shape[0]
    F = C @ G
    Rt = C @ Pm @ C.T + Sv
    RiF = np.linalg.solve(Rt, F)
    M = np.linalg.solve(F.T @ RiF, RiF.T)
    GM = G @ M
    Phi = np.eye(n) - GM @ C
    Im = np.eye(C.shape[0]) - C @ GM
    PhiP = Phi @ Pm @ Phi.T
    cov_s_eta = PhiP @ C.T - GM @ Sv @ Im.T
    cov_eta = C @ PhiP @ C.T + Im @ Sv @ Im.T
    # cutoff relative to the innovation scale: when C G is square, cov_eta is pure roundoff
    w, V = np.linalg.eigh(0.5 * (cov_eta + cov_eta.T))
    scale = max(np.linalg.norm(Rt, 2), 1e-300)
    keep = w > 1e-12 * scale
    K = (cov_s_eta @ V[:, keep]) / w[keep] @ V[:, keep].T
    Lbar = K + (np.eye(n) - K @ C) @ GM
    Abar = np.eye(n) - Lbar @ C
    return M, K, Lbar, Abar


def design_gains(model: SubsystemModel, decomp: Decomposition | None = None) -> FilterGains:
    """Run the UMV covariance recursion to a fixed point and freeze the gains."""
    if decomp is None:
        decomp = decompose_interconnection([a for _, a in model.neighbors], model.C)
    A, C, G = model.A, model.C, decomp.G
    Sw, Sv = model.sigma_w, model.sigma_v
    F = C @ G
    sv = np.linalg.svd(F, compute_uv=False)
    if sv.size == 0 or sv[0] == 0 or int(np.sum(sv > 1e-10 * sv[0])) < G.shape[1]:
        raise ModelError("unknown-input condition failed (Assumption 1): rank(C G) < rank(G)")
    if not _controllable(A, Sw):
        raise FilterDesignError("(A, sigma_w^1/2) is not controllable")
    P = np.array(model.sigma_x0, dtype=float)
    for it in range(1, MAX_ITER + 1):
        Pm = A @ P @ A.T + Sw
        M, K, Lbar, Abar = _gains_from_prior(A, C, G, Pm, Sv)
        Pn = Abar @ Pm @ Abar.T + Lbar @ Sv @ Lbar.T
        Pn = 0.5 * (Pn + Pn.T)
        done = np.linalg.norm(Pn - P) <= FIXED_POINT_TOL * max(1.0, np.linalg.norm(Pn))
        P = Pn
        if done:
            break
    else:
        raise FilterDesignError("filter design diverged: no fixed point within 10000 iterations")
    if not np.all(np.isfinite(P)):
        raise FilterDesignError("filter design diverged")
    Pm = A @ P @ A.T + Sw
    M, K, Lbar, Abar = _gains_from_prior(A, C, G, Pm, Sv)
    Ahat = Abar @ A
    if spectral_radius(Ahat) >= 1.0 - 1e-9:
        raise FilterDesignError(f"unstable filter: spectral radius {spectral_radius(Ahat):.6g}")
    gains = FilterGains(M=M, K=K, Lbar=Lbar, Abar=Abar, Ahat=Ahat, sigma_e_ss=np.zeros_like(A),
                        A=A, B=model.B, C=C, G=G, iterations=it)
    sig = steady_state_error_cov(gains, model)
    return FilterGains(M=M, K=K, Lbar=Lbar, Abar=Abar, Ahat=Ahat, sigma_e_ss=sig,
                       A=A, B=model.B, C=C, G=G, iterations=it)


def steady_state_error_cov(gains: FilterGains, model: SubsystemModel | None = None, sigma_w=None,
                           sigma_v=None, start=None, max_doublings=200) -> np.ndarray:
    """Fixed point of S = Ahat S Ahat^T + Abar Sw Abar^T + Lbar Sv Lbar^T.

    The fixed-point iteration is run in squared form (each pass doubles the
    number of accumulated steps) until the relative change drops below 1e-12.
    ``start`` is the initial iterate; the limit does not depend on it.
    """
    if sigma_w is None:
        sigma_w = model.sigma_w
    if sigma_v is None:
        sigma_v = model.sigma_v
    Ah = gains.Ahat
    if spectral_radius(Ah) >= 1.0:
        raise FilterDesignError("unstable filter: error covariance has no fixed point")
    Q = gains.Abar @ sigma_w @ gains.Abar.T + gains.Lbar @ sigma_v @ gains.Lbar.T
    X = 0.5 * (Q + Q.T)
    Ak = Ah.copy()
    for _ in range(max_doublings):
        Xn = X + Ak @ X @ Ak.T
        change = np.linalg.norm(Xn - X)
        X = Xn
        Ak = Ak @ Ak
        if change <= FIXED_POINT_TOL * max(np.linalg.norm(X), 1e-300) or change == 0.0:
            break
    else:
        raise FilterDesignError("error covariance iteration did not converge")
    if start is not None:
        X = X + Ak @ np.asarray(start, dtype=float) @ Ak.T
    return 0.5 * (X + X.T)


def filter_step(gains: FilterGains, state: FilterState, u_prev, y):
    """Advance the estimator by one measurement.

    Returns the new state, the unknown-input estimate xi^(k-1) and the
    input-compensated prediction A x^(k-1) + B u(k-1) + G xi^(k-1).
    """
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (gains.C.shape[0],) or u_prev.shape != (gains.B.shape[1],):
        raise ValueError("dimension mismatch in filter_step")
    pred = gains.A @ state.x_hat + gains.B @ u_prev
    xi = gains.M @ (y - gains.C @ pred)
    x_hat = gains.Abar @ pred + gains.Lbar @ y
    x_prior = pred + gains.G @ xi
    return FilterState(x_hat, xi), xi, x_prior
