"""Neighbor residuals and the three quadratic-form attack detectors.

* known covariance: t = z' S^-1 z against a chi-squared threshold,
* mismatched: the same statistic evaluated with the noise-free covariance,
* adaptive: z' S^-1 z with S accumulated from K* attack-free secondary residuals.

The closed forms for the adaptive detector are exact for circularly-symmetric
complex Gaussian residuals. For real residuals the exact law is the Hotelling
one, (K* - m + 1)/m * z' S^-1 z ~ F'(m, K* - m + 1, c); ``adaptive_pfa_real``
and ``adaptive_pd_real`` evaluate it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import specfun
from .sysmodel import SubsystemModel

__all__ = [
    "ResidualModel",
    "AdaptiveSample",
    "neighbor_residual",
    "residual_covariance",
    "glrt_statistic",
    "threshold_from_pfa",
    "detection_probability",
    "false_alarm_probability",
    "noncentrality",
    "adaptive_statistic",
    "adaptive_pfa",
    "adaptive_threshold",
    "adaptive_pd",
    "adaptive_pfa_real",
    "adaptive_pd_real",
    "whitened_spectrum",
    "mismatched_pfa",
    "weighted_chi2_sf",
]


def _chol(S):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    try:
        return np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("covariance is not positive definite") from None


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


@dataclass(frozen=True)
class ResidualModel:
    sigma_z: np.ndarray
    sigma_p: np.ndarray
    sigma_zp: np.ndarray
    CE: np.ndarray

    @property
    def m(self):
        return self.sigma_z.shape[0]

    def threshold(self, p_f):
        return threshold_from_pfa(self.m, p_f)

    def mean(self, attacker_states):
        """Residual mean C E col[x_a] for neighbor attacker states in neighbor order."""
        xa = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in attacker_states])
        return self.CE @ xa

    def with_schedule(self, blocks):
        sp = self.CE @ _block_diag([np.asarray(b, dtype=float) for b in blocks]) @ self.CE.T
        sp = 0.5 * (sp + sp.T)
        return ResidualModel(self.sigma_z, sp, self.sigma_z + sp, self.CE)


def neighbor_residual(model: SubsystemModel, x_hat_prev, received, u_prev, y) -> np.ndarray:
    """z(k) = y(k) - C [A x^(k-1) + B u(k-1) + sum_j A_ij theta_j(k-1)].

    ``received`` holds the neighbor messages theta_j(k-1) in neighbor order;
    without privacy noise they are the neighbors' own estimates.
    """
    x_hat_prev = np.atleast_1d(np.asarray(x_hat_prev, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    if len(received) != len(model.neighbors):
        raise ValueError("one received estimate per neighbor is required")
    if x_hat_prev.shape != (model.n,) or y.shape != (model.m,) or u_prev.shape != (model.q,):
        raise ValueError("dimension mismatch in neighbor_residual")
    pred = model.A @ x_hat_prev + model.B @ u_prev
    for (j, Aij), th in zip(model.neighbors, received):
        th = np.atleast_1d(np.asarray(th, dtype=float))
        if th.shape != (Aij.shape[1],):
            raise ValueError(f"estimate from neighbor {j} has wrong dimension")
        pred = pred + Aij @ th
    return y - model.C @ pred


def residual_covariance(model: SubsystemModel, sigma_e, neighbor_sigma_e, schedule=None) -> ResidualModel:
    """Residual covariance with and without privacy noise.

    ``sigma_e`` is the node's steady-state estimation error covariance (or its
    FilterGains), ``neighbor_sigma_e`` the neighbors' in neighbor order (a
    sequence or a dict keyed by neighbor id). ``schedule`` is a sequence of
    privacy covariances (or any object with ``blocks``).
    """
    se = getattr(sigma_e, "sigma_e_ss", sigma_e)
    if isinstance(neighbor_sigma_e, dict):
        neighbor_sigma_e = [neighbor_sigma_e[j] for j in model.neighbor_ids]
    nse = [np.asarray(getattr(s, "sigma_e_ss", s), dtype=float) for s in neighbor_sigma_e]
    C, A = model.C, model.A
    CE = C @ model.E
    sz = (C @ A @ se @ A.T @ C.T + CE @ _block_diag(nse) @ CE.T
          + C @ model.sigma_w @ C.T + model.sigma_v)
    sz = 0.5 * (sz + sz.T)
    base = ResidualModel(sz, np.zeros_like(sz), sz.copy(), CE)
    if schedule is None:
        return base
    return base.with_schedule(getattr(schedule, "blocks", schedule))


def glrt_statistic(z, sigma) -> np.ndarray | float:
    """z' sigma^-1 z; ``z`` may carry leading batch dimensions."""
    L = _chol(sigma)
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1, L.shape[0])
    w = np.linalg.solve(L, flat.T)
    t = np.einsum("ij,ij->j", w, w)
    if z.ndim == 1:
        return float(t[0])
    return t.reshape(z.shape[:-1])


def threshold_from_pfa(m: int, p_f: float) -> float:
    """tau = 2 P^-1(m/2, 1 - p_f)."""
    if not 0.0 < p_f < 1.0:
        raise ValueError("p_f must lie in (0, 1)")
    return 2.0 * specfun.inv_reg_lower_gamma(0.5 * m, 1.0 - p_f)


def false_alarm_probability(m: int, tau: float) -> float:
    return specfun.chi2_sf(m, tau)


def detection_probability(m: int, tau: float, c: float) -> float:
    """1 - F_m(tau; c), the noncentral chi-squared tail."""
    if tau <= 0 or c < 0:
        raise ValueError("need tau > 0 and c >= 0")
    return 1.0 - specfun.noncentral_chi2_cdf(m, c, tau)


def noncentrality(res: ResidualModel, attacker_states, use_privacy: bool = True) -> float:
    """c = a' Sigma^-1 a with a = C E col[x_a]."""
    a = res.mean(attacker_states)
    return glrt_statistic(a, res.sigma_zp if use_privacy else res.sigma_z)


def whitened_spectrum(res: ResidualModel) -> np.ndarray:
    """Eigenvalues of sigma_z^-1/2 sigma_zp sigma_z^-1/2 (all >= 1)."""
    L = _chol(res.sigma_z)
    W = np.linalg.solve(L, np.linalg.solve(L, res.sigma_zp).T)
    return np.linalg.eigvalsh(0.5 * (W + W.T))


def weighted_chi2_sf(weights, x: float, tol: float = 1e-12, max_terms: int = 200_000) -> float:
    """P(sum_i w_i chi2_1 > x) for positive weights.

    Ruben's expansion as a mixture of central chi-squared laws with
    nonnegative weights; the discarded mixture mass bounds the error.
    """
    lam = np.asarray(weights, dtype=float).ravel()
    if lam.size == 0 or np.any(lam <= 0):
        raise ValueError("weights must be positive")
    if x <= 0:
        return 1.0
    beta = float(lam.min())
    m = lam.size
    q = 1.0 - beta / lam
    cap = 1024
    c = np.zeros(cap)
    g = np.zeros(cap)
    c[0] = float(np.exp(0.5 * np.sum(np.log(beta / lam))))
    qp = np.ones_like(q)
    cdf = c[0] * specfun.chi2_cdf(m, x / beta)
    mass = c[0]
    k = 0
    while 1.0 - mass > tol:
        k += 1
        if k > max_terms:
            raise specfun.ConvergenceError("weighted chi-squared series did not converge")
        if k >= cap:
            cap *= 2
            c = np.resize(c, cap)
            g = np.resize(g, cap)
        qp = qp * q
        g[k] = float(np.sum(qp))
        ck = float(np.dot(g[k:0:-1], c[:k])) / (2.0 * k)
        c[k] = ck
        mass += ck
        cdf += ck * specfun.chi2_cdf(m + 2 * k, x / beta)
        if ck < 1e-300 and k > 10:
            break
    return min(1.0, max(0.0, 1.0 - cdf))


def mismatched_pfa(res: ResidualModel, tau: float) -> float:
    """False-alarm rate when noised residuals are scored against sigma_z alone."""
    return weighted_chi2_sf(whitened_spectrum(res), tau)


@dataclass(frozen=True)
class AdaptiveSample:
    secondary: np.ndarray
    S: np.ndarray

    @classmethod
    def from_residuals(cls, secondary):
        Z = np.atleast_2d(np.asarray(secondary, dtype=float))
        K, m = Z.shape
        if K <= m:
            raise ValueError("insufficient secondary data: need K* > m")
        S = Z.T @ Z
        S = 0.5 * (S + S.T)
        s = np.linalg.eigvalsh(S)
        if s[0] <= 1e-12 * max(s[-1], 1e-300):
            raise np.linalg.LinAlgError("secondary sample matrix is singular")
        return cls(Z, S)

    @property
    def K_star(self):
        return self.secondary.shape[0]

    @property
    def m(self):
        return self.secondary.shape[1]


def adaptive_statistic(sample: AdaptiveSample, z) -> np.ndarray | float:
    """z' S^-1 z, to be compared against tau_s - 1."""
    return glrt_statistic(z, sample.S)


def _check_adaptive(m, K_star):
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    if int(K_star) != K_star or K_star <= m:
        raise ValueError("insufficient secondary data: need K* > m")


def adaptive_pfa(m: int, K_star: int, tau_s: float) -> float:
    """C(K*, m-1) tau^-L 2F1(L, 1-m; L+1; 1/tau), L = K* - m + 1."""
    _check_adaptive(m, K_star)
    if tau_s <= 1.0:
        return 1.0
    L = K_star - m + 1
    logc = specfun.lgamma(K_star + 1) - specfun.lgamma(m) - specfun.lgamma(L + 1)
    val = math.exp(logc - L * math.log(tau_s)) * specfun.gauss_2f1_terminating(L, 1 - m, L + 1, 1.0 / tau_s)
    return min(1.0, max(0.0, val))


def adaptive_threshold(m: int, K_star: int, p_f: float, tol: float = 1e-10) -> float:
    """Invert ``adaptive_pfa`` for tau_s in (1, 1e9] by bisection."""
    _check_adaptive(m, K_star)
    if not 0.0 < p_f < 1.0:
        raise ValueError("p_f must lie in (0, 1)")
    lo, hi = 1.0, 1e9
    if adaptive_pfa(m, K_star, hi) > p_f:
        raise ValueError("target false-alarm rate not reachable for tau_s <= 1e9")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        pf = adaptive_pfa(m, K_star, mid)
        if abs(pf - p_f) <= tol:
            return mid
        if pf > p_f:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


_GL_CACHE = {}


def _gauss_legendre(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _log_beta_density(r, L, m):
    # Beta(L + 1, m - 1) density
    logc = specfun.lgamma(L + m) - specfun.lgamma(L + 1) - specfun.lgamma(m - 1)
    return logc + L * np.log(r) + (m - 2) * np.log1p(-r)


def adaptive_pd(m: int, K_star: int, tau_s: float, c: float, nodes: int = 512) -> float:
    """Detection probability of the adaptive detector.

    P_d = int_0^1 f(r) [1 - sum_{l=1}^{L} Bin(l; L, 1 - 1/(r tau)) Q(l, c/tau)] dr
    with the bracket equal to 1 on r < 1/tau, f the Beta(L+1, m-1) density
    (a point mass at r = 1 when m = 1) and Q the regularized upper gamma,
    i.e. the truncated Poisson sum. The integrand is a polynomial in r, so the
    Gauss-Legendre rule on the split interval is exact up to rounding.
    """
    _check_adaptive(m, K_star)
    if tau_s <= 1.0:
        raise ValueError("tau_s must exceed 1")
    if c < 0:
        raise ValueError("noncentrality must be nonnegative")
    L = K_star - m + 1
    y = c / tau_s
    Q = np.array([specfun.reg_upper_gamma(l, y) for l in range(1, L + 1)])
    ls = np.arange(1, L + 1)
    logbin = np.array([specfun.lgamma(L + 1) - specfun.lgamma(l + 1) - specfun.lgamma(L - l + 1) for l in ls])

    def bracket(r):
        p = 1.0 - 1.0 / (r * tau_s)
        with np.errstate(divide="ignore"):
            lp = np.log(np.clip(p, 0.0, None))
        logw = logbin[None, :] + ls[None, :] * lp[:, None] + (L - ls)[None, :] * (-np.log(r * tau_s))[:, None]
        return 1.0 - np.exp(logw) @ Q

    if m == 1:
        return float(min(1.0, max(0.0, bracket(np.array([1.0]))[0])))
    n = max(int(nodes), L + K_star + 2)
    x, w = _gauss_legendre(n)
    a = 1.0 / tau_s
    r0 = 0.5 * a * (x + 1.0)
    r1 = a + 0.5 * (1.0 - a) * (x + 1.0)
    low = 0.5 * a * np.sum(w * np.exp(_log_beta_density(r0, L, m)))
    high = 0.5 * (1.0 - a) * np.sum(w * np.exp(_log_beta_density(r1, L, m)) * bracket(r1))
    return float(min(1.0, max(0.0, low + high)))


def adaptive_pfa_real(m: int, K_star: int, tau_s: float) -> float:
    """Exact false-alarm rate of the adaptive detector for real Gaussian residuals."""
    return adaptive_pd_real(m, K_star, tau_s, 0.0)


def adaptive_pd_real(m: int, K_star: int, tau_s: float, c: float) -> float:
    """Exact detection probability for real Gaussian residuals (noncentral F tail)."""
    _check_adaptive(m, K_star)
    if tau_s <= 1.0:
        return 1.0
    d2 = K_star - m + 1
    f = d2 * (tau_s - 1.0) / m
    return 1.0 - specfun.noncentral_f_cdf(m, d2, c, f)
