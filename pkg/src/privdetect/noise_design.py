"""Privacy-noise covariance design for one receiving node.

Two well-posed problems are solved over per-neighbor covariances
Sigma_alpha_j = L_j L_j' + 1e-8 I (L_j lower triangular, unconstrained):

* weighted: minimize sum_j MI_j + kappa * tr(Sigma_p), with
  Sigma_p = sum_j H_j Sigma_alpha_j H_j' and H_j = C_i A_ij;
* false-alarm constrained: minimize sum_j MI_j subject to
  Sigma_z + Sigma_p < h* Sigma_z, handled with a log-det barrier whose weight
  decreases geometrically.

Minimizing MI alone has no minimizer (MI -> 0 only as the noise grows without
bound), so it is not offered.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import specfun
from .detect import ResidualModel, residual_covariance, threshold_from_pfa
from .privacy_mi import (
    DegenerateJointError,
    JointCovariance,
    build_stacked,
    joint_covariance,
    mutual_information,
    schur_parts,
)

__all__ = [
    "PrivacySchedule",
    "SolverReport",
    "SolverError",
    "DesignContext",
    "SolverOptions",
    "design_context",
    "total_mi",
    "mi_gradient",
    "trace_gradient",
    "fa_cap",
    "design_weighted",
    "design_fa_constrained",
]

JITTER = 1e-8


@dataclass(frozen=True)
class PrivacySchedule:
    """Per-neighbor privacy covariances, in the receiving node's neighbor order."""

    neighbor_ids: tuple
    blocks: tuple

    def __post_init__(self):
        blocks = []
        for b in self.blocks:
            b = np.array(b, dtype=float, ndmin=2)
            if b.shape[0] != b.shape[1]:
                raise ValueError("privacy covariance blocks must be square")
            if not np.allclose(b, b.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(b).max())):
                raise ValueError("privacy covariance blocks must be symmetric")
            b = 0.5 * (b + b.T)
            if np.linalg.eigvalsh(b)[0] < 1e-10:
                raise ValueError("privacy covariance blocks must be positive definite (min eigenvalue >= 1e-10)")
            b.setflags(write=False)
            blocks.append(b)
        if len(blocks) != len(self.neighbor_ids):
            raise ValueError("one block per neighbor is required")
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "neighbor_ids", tuple(int(j) for j in self.neighbor_ids))

    def scaled(self, s):
        return PrivacySchedule(self.neighbor_ids, tuple(s * b for b in self.blocks))

    def to_dict(self):
        return {"neighbors": list(self.neighbor_ids), "blocks": [b.tolist() for b in self.blocks]}

    @classmethod
    def isotropic(cls, neighbor_ids, dims, value):
        return cls(tuple(neighbor_ids), tuple(value * np.eye(d) for d in dims))


@dataclass
class SolverReport:
    objective_trace: list = field(default_factory=list)
    grad_norm: float = float("nan")
    barrier_weights: list = field(default_factory=list)
    feasibility_margins: dict = field(default_factory=dict)
    iterations: int = 0
    inner_iterations: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


class SolverError(RuntimeError):
    def __init__(self, message, schedule=None, report=None):
        super().__init__(message)
        self.schedule = schedule
        self.report = report


@dataclass(frozen=True)
class SolverOptions:
    gtol: float = 1e-6
    ftol: float = 1e-9
    max_iter: int = 500
    armijo_c: float = 1e-4
    shrink: float = 0.5
    init_step: float = 1.0
    init_scale: float = 0.01
    mu_start: float = 1.0
    mu_end: float = 1e-6
    mu_factor: float = 0.1
    seed: int | None = None


@dataclass
class DesignContext:
    """Everything the design problems of receiving node ``node_id`` need."""

    node_id: int
    neighbor_ids: tuple
    dims: tuple
    H: tuple
    joints: tuple
    residual: ResidualModel

    @property
    def m(self):
        return self.residual.m


def design_context(network, gains, node_id, K: int = 5) -> DesignContext:
    mdl = network[node_id]
    H, joints, dims = [], [], []
    for j, Aij in mdl.neighbors:
        mj = network[j]
        gj = gains[j]
        ops = build_stacked(mj, gj, K)
        joints.append(joint_covariance(ops, mj, gj))
        H.append(mdl.C @ Aij)
        dims.append(mj.n)
    res = residual_covariance(mdl, gains[node_id], [gains[j] for j in mdl.neighbor_ids])
    return DesignContext(node_id, tuple(mdl.neighbor_ids), tuple(dims), tuple(H), tuple(joints), res)


def _mi_and_grad(jc: JointCovariance, sa):
    j = jc.with_alpha(sa)
    mi = mutual_information(j)
    Lt, Y, D = schur_parts(j)
    Ld = np.linalg.cholesky(D)
    # W = St^-1 X' D^-1 X St^-1 with X = Sigma_xtheta
    V = np.linalg.solve(Lt.T, Y)  # St^-1 X'
    U = np.linalg.solve(Ld, V.T)  # Ld^-1 X St^-1
    W = U.T @ U
    n = sa.shape[0]
    g = np.zeros((n, n))
    for k in range(jc.K):
        g += W[k * n:(k + 1) * n, k * n:(k + 1) * n]
    g = -0.5 * g
    return mi, 0.5 * (g + g.T)


def total_mi(context: DesignContext, schedule) -> float:
    blocks = getattr(schedule, "blocks", schedule)
    return float(sum(mutual_information(jc.with_alpha(b)) for jc, b in zip(context.joints, blocks)))


def mi_gradient(context: DesignContext, schedule):
    """d(sum_j MI_j)/d Sigma_alpha_j as symmetric blocks."""
    blocks = getattr(schedule, "blocks", schedule)
    return [_mi_and_grad(jc, np.asarray(b, dtype=float))[1] for jc, b in zip(context.joints, blocks)]


def trace_gradient(context: DesignContext):
    """d tr(Sigma_p)/d Sigma_alpha_j = H_j' H_j."""
    return [Hj.T @ Hj for Hj in context.H]


def sigma_p(context: DesignContext, blocks):
    sp = sum(Hj @ b @ Hj.T for Hj, b in zip(context.H, blocks))
    return 0.5 * (sp + sp.T)


def fa_cap(m: int, p_f: float, nu: float) -> float:
    """h* = tau / (2 P^-1(m/2, 1 - p_f - nu))."""
    if nu <= 0:
        raise ValueError("infeasible cap (h* <= 1): nu must be positive")
    if not 0.0 < p_f < 1.0 or p_f + nu >= 1.0:
        raise ValueError("need 0 < p_f and p_f + nu < 1")
    return threshold_from_pfa(m, p_f) / (2.0 * specfun.inv_reg_lower_gamma(0.5 * m, 1.0 - p_f - nu))


# parameter packing: lower-triangular entries of each L_j
def _tril_index(dims):
    return [np.tril_indices(d) for d in dims]


def _unpack(theta, dims, idx):
    Ls, pos = [], 0
    for d, (r, c) in zip(dims, idx):
        L = np.zeros((d, d))
        k = len(r)
        L[r, c] = theta[pos:pos + k]
        pos += k
        Ls.append(L)
    return Ls


def _pack(mats, idx):
    return np.concatenate([M[r, c] for M, (r, c) in zip(mats, idx)])


def _blocks_from_L(Ls):
    return [L @ L.T + JITTER * np.eye(L.shape[0]) for L in Ls]


def _param_grad(Gs, Ls, idx):
    return _pack([2.0 * G @ L for G, L in zip(Gs, Ls)], idx)


def _init_L(dims, scale, seed):
    if seed is None:
        return [math.sqrt(scale) * np.eye(d) for d in dims]
    rng = np.random.default_rng(seed)
    out = []
    for d in dims:
        L = np.tril(rng.standard_normal((d, d))) * math.sqrt(scale) * 0.3
        L[np.diag_indices(d)] = math.sqrt(scale) * np.exp(0.5 * rng.standard_normal(d))
        out.append(L)
    return out


def _diag_scale(x):
    ax = np.abs(x)
    return np.maximum(ax, max(1e-3 * float(ax.max(initial=0.0)), 1e-12)) ** 2


def _newton_direction(fun, x, g):
    """Modified Newton step from a finite-difference Hessian in magnitude-scaled coordinates.

    Returns (step, decrement) with decrement = g' H^+ g, or (None, inf) when
    the Hessian cannot be formed inside the domain.
    """
    n = x.size
    d = np.maximum(np.abs(x), max(1e-3 * float(np.abs(x).max(initial=0.0)), 1e-12))
    Hs = np.zeros((n, n))
    for i in range(n):
        h = 1e-6 * d[i]
        for _ in range(12):
            e = np.zeros(n)
            e[i] = h
            gp = fun(x + e)[1]
            gm = fun(x - e)[1]
            if gp is not None and gm is not None:
                break
            h *= 0.1
        else:
            return None, math.inf
        Hs[:, i] = (gp - gm) / (2.0 * h) * d
    Hs = d[:, None] * 0.5 * (Hs + Hs.T)
    w, V = np.linalg.eigh(Hs)
    keep = w > 1e-10 * max(float(w.max(initial=0.0)), 1e-300)
    gs = d * g
    coef = (V[:, keep].T @ gs) / w[keep]
    step = -d * (V[:, keep] @ coef)
    return step, float(gs @ (V[:, keep] @ coef))


def _bfgs(fun, x0, opts: SolverOptions, trace):
    """BFGS with Armijo backtracking. ``fun`` returns (f, g) or (inf, None) outside the domain.

    The inverse-Hessian seed is diagonal in the squared parameter magnitudes,
    so parameters living on very different scales move by comparable relative
    amounts. When the line search fails, a modified Newton step from a
    finite-difference Hessian is tried; a Newton decrement at rounding level
    means the iterate is stationary to working precision. Returns the iterate,
    objective, gradient, iteration count, gradient norm, decrement and a status.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise SolverError("initial point outside the domain")
    D = _diag_scale(x)
    Hinv = np.diag(D)
    fresh = True
    trace.append(f)
    dec = math.inf

    def search(p, slope):
        t = opts.init_step
        while t >= 1e-20:
            xn = x + t * p
            fn, gn = fun(xn)
            if np.isfinite(fn) and fn <= f + opts.armijo_c * t * slope and fn < f:
                return xn, fn, gn
            t *= opts.shrink
        return None, None, None

    for it in range(1, opts.max_iter + 1):
        p = -Hinv @ g
        slope = float(g @ p)
        if slope >= 0:
            D = _diag_scale(x)
            Hinv, fresh = np.diag(D), True
            p = -Hinv @ g
            slope = float(g @ p)
        xn, fn, gn = search(p, slope)
        if xn is None:
            if float(np.linalg.norm(g)) < opts.gtol:
                return x, f, g, it, float(np.linalg.norm(g)), 0.0, "converged"
            p, dec = _newton_direction(fun, x, g)
            if p is not None and dec <= 2e-12 * max(1.0, abs(f)):
                return x, f, g, it, float(np.linalg.norm(g)), dec, "stationary"
            if p is not None:
                xn, fn, gn = search(p, -dec)
            if xn is None:
                return x, f, g, it, float(np.linalg.norm(g)), dec, "line search stalled"
            D = _diag_scale(xn)
            fresh = True
        s = xn - x
        y = gn - g
        rel = abs(f - fn) / max(abs(fn), 1e-300)
        x, f, g = xn, fn, gn
        trace.append(f)
        gnorm = float(np.linalg.norm(g))
        if gnorm < opts.gtol and rel < opts.ftol:
            return x, f, g, it, gnorm, float(g @ Hinv @ g), "converged"
        sy = float(s @ y)
        if sy > 1e-300:
            if fresh:
                Hinv = (sy / float(y @ (D * y))) * np.diag(D)
                fresh = False
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = (Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                    + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
    return x, f, g, opts.max_iter, float(np.linalg.norm(g)), float(g @ Hinv @ g), "iteration limit"


def _accept(status):
    return status in ("converged", "stationary")


def _schedule(context, Ls):
    return PrivacySchedule(context.neighbor_ids, tuple(_blocks_from_L(Ls)))


def _margins(context, blocks, cap=None):
    out = {f"alpha_{j}": float(np.linalg.eigvalsh(b)[0]) for j, b in zip(context.neighbor_ids, blocks)}
    if cap is not None:
        R = (cap - 1.0) * context.residual.sigma_z - sigma_p(context, blocks)
        out["fa_constraint"] = float(np.linalg.eigvalsh(0.5 * (R + R.T))[0])
    return out


def design_weighted(context: DesignContext, kappa: float, options: SolverOptions | None = None):
    """Minimize sum_j MI_j + kappa tr(Sigma_p) over the privacy schedule."""
    opts = options or SolverOptions()
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    dims = context.dims
    idx = _tril_index(dims)
    HtH = trace_gradient(context)

    def fun(theta):
        Ls = _unpack(theta, dims, idx)
        blocks = _blocks_from_L(Ls)
        f, Gs = 0.0, []
        try:
            for jc, b, hh in zip(context.joints, blocks, HtH):
                mi, gm = _mi_and_grad(jc, b)
                f += mi + kappa * float(np.sum(hh * b))
                Gs.append(gm + kappa * hh)
        except (DegenerateJointError, np.linalg.LinAlgError):
            return math.inf, None
        return f, _param_grad(Gs, Ls, idx)

    report = SolverReport()
    theta0 = _pack(_init_L(dims, opts.init_scale, opts.seed), idx)
    x, f, g, it, gnorm, dec, msg = _bfgs(fun, theta0, opts, report.objective_trace)
    Ls = _unpack(x, dims, idx)
    sched = _schedule(context, Ls)
    report.grad_norm = gnorm
    report.iterations = it
    report.inner_iterations = [it]
    report.feasibility_margins = _margins(context, sched.blocks)
    report.message = msg
    report.converged = _accept(msg)
    if not report.converged:
        raise SolverError(f"weighted design did not converge: {msg}", sched, report)
    return sched, report


def design_fa_constrained(context: DesignContext, p_f: float, nu: float, options: SolverOptions | None = None):
    """Minimize sum_j MI_j subject to Sigma_z + Sigma_p < h* Sigma_z (log-det barrier)."""
    opts = options or SolverOptions()
    cap = fa_cap(context.m, p_f, nu)
    Sz = context.residual.sigma_z
    dims = context.dims
    idx = _tril_index(dims)
    Rbase = (cap - 1.0) * Sz

    def make_fun(mu):
        def fun(theta):
            Ls = _unpack(theta, dims, idx)
            blocks = _blocks_from_L(Ls)
            R = Rbase - sigma_p(context, blocks)
            try:
                Lr = np.linalg.cholesky(R)
            except np.linalg.LinAlgError:
                return math.inf, None
            Rinv = np.linalg.solve(Lr.T, np.linalg.solve(Lr, np.eye(R.shape[0])))
            f = -mu * 2.0 * float(np.sum(np.log(np.diag(Lr))))
            Gs = []
            try:
                for jc, b, Hj in zip(context.joints, blocks, context.H):
                    mi, gm = _mi_and_grad(jc, b)
                    f += mi
                    Gs.append(gm + mu * Hj.T @ Rinv @ Hj)
            except (DegenerateJointError, np.linalg.LinAlgError):
                return math.inf, None
            return f, _param_grad(Gs, Ls, idx)
        return fun

    Ls = _init_L(dims, opts.init_scale, opts.seed)
    for _ in range(200):
        R = Rbase - sigma_p(context, _blocks_from_L(Ls))
        if np.linalg.eigvalsh(0.5 * (R + R.T))[0] > 0:
            break
        Ls = [L / math.sqrt(2.0) for L in Ls]  # halves Sigma_alpha
    else:
        raise SolverError("could not find a strictly feasible starting schedule")
    report = SolverReport()
    theta = _pack(Ls, idx)
    mu = opts.mu_start
    n_stage = int(round(math.log(opts.mu_end / opts.mu_start) / math.log(opts.mu_factor))) + 1
    msg, gnorm = "", float("nan")
    for stage in range(n_stage):
        trace = []
        theta, f, g, it, gnorm, dec, msg = _bfgs(make_fun(mu), theta, opts, trace)
        report.barrier_weights.append(mu)
        report.inner_iterations.append(it)
        report.objective_trace.append(trace[-1])
        if not _accept(msg):
            sched = _schedule(context, _unpack(theta, dims, idx))
            report.feasibility_margins = _margins(context, sched.blocks, cap)
            raise SolverError(f"barrier stage mu={mu:g} did not converge", sched, report)
        mu *= opts.mu_factor
    Ls = _unpack(theta, dims, idx)
    sched = _schedule(context, Ls)
    report.iterations = len(report.barrier_weights)
    report.grad_norm = gnorm
    report.feasibility_margins = _margins(context, sched.blocks, cap)
    report.message = msg
    report.converged = report.feasibility_margins["fa_constraint"] > 0
    if not report.converged:
        raise SolverError("barrier solution is not strictly feasible", sched, report)
    return sched, report
