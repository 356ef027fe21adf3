"""Interconnected linear subsystems, covert attacks and closed-loop rollouts."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from . import kernels

__all__ = [
    "ModelError",
    "DivergenceError",
    "SubsystemModel",
    "Decomposition",
    "CovertAttack",
    "NetworkTrajectory",
    "Network",
    "decompose_interconnection",
    "lqr_output_gain",
    "gaussian_factor",
    "sinusoidal_ramp_attack",
    "RolloutPlan",
    "build_plan",
    "rollout",
    "simulate",
]

SYM_TOL = 1e-12
RANK_TOL = 1e-10
DIVERGENCE_LIMIT = 1e12


class ModelError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"trajectory diverged at step {step}")
        self.step = step


def _mat(a, name, shape=None):
    arr = np.array(a, dtype=float, ndmin=2)
    if shape is not None and arr.shape != shape:
        raise ModelError(f"{name} has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


def _check_sym(S, name):
    if not np.allclose(S, S.T, rtol=0.0, atol=SYM_TOL * max(1.0, np.abs(S).max())):
        raise ModelError(f"{name} is not symmetric")


def _min_eig(S):
    return float(np.linalg.eigvalsh(0.5 * (S + S.T)).min())


@dataclass(frozen=True)
class SubsystemModel:
    """One node: x+ = A x + B u + sum_j A_ij x_j + w,  y = C x + v.

    ``neighbors`` is an ordered sequence of ``(neighbor_id, A_ij)``; that
    order fixes the column blocks of the stacked coupling ``E``.
    """

    id: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    neighbors: tuple
    sigma_w: np.ndarray
    sigma_v: np.ndarray
    sigma_x0: np.ndarray

    def __post_init__(self):
        A = _mat(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError("A must be square")
        B = _mat(self.B, "B")
        if B.shape[0] != n:
            raise ModelError("B must have n rows")
        C = _mat(self.C, "C")
        if C.shape[1] != n:
            raise ModelError("C must have n columns")
        m = C.shape[0]
        nbrs = tuple((int(j), _mat(Aij, f"A_{self.id}{j}")) for j, Aij in self.neighbors)
        for j, Aij in nbrs:
            if Aij.shape[0] != n:
                raise ModelError(f"coupling from node {j} must have {n} rows")
        if len({j for j, _ in nbrs}) != len(nbrs):
            raise ModelError("duplicate neighbor id")
        sw = _mat(self.sigma_w, "sigma_w", (n, n))
        sv = _mat(self.sigma_v, "sigma_v", (m, m))
        sx = _mat(self.sigma_x0, "sigma_x0", (n, n))
        for S, name in ((sw, "sigma_w"), (sv, "sigma_v"), (sx, "sigma_x0")):
            _check_sym(S, name)
        scale = lambda S: max(1.0, float(np.abs(S).max()))
        if _min_eig(sw) < -SYM_TOL * scale(sw):
            raise ModelError("sigma_w must be positive semidefinite")
        if _min_eig(sv) <= 0:
            raise ModelError("sigma_v must be positive definite")
        if _min_eig(sx) < -SYM_TOL * scale(sx):
            raise ModelError("sigma_x0 must be positive semidefinite")
        for name, val in (("A", A), ("B", B), ("C", C), ("neighbors", nbrs),
                          ("sigma_w", sw), ("sigma_v", sv), ("sigma_x0", sx)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def neighbor_ids(self):
        return [j for j, _ in self.neighbors]

    @property
    def E(self):
        if not self.neighbors:
            return np.zeros((self.n, 0))
        return np.hstack([Aij for _, Aij in self.neighbors])

    def coupling(self, j):
        for jj, Aij in self.neighbors:
            if jj == j:
                return Aij
        raise KeyError(j)

    def replace(self, **changes):
        kw = dict(id=self.id, A=self.A, B=self.B, C=self.C, neighbors=self.neighbors,
                  sigma_w=self.sigma_w, sigma_v=self.sigma_v, sigma_x0=self.sigma_x0)
        kw.update(changes)
        return SubsystemModel(**kw)


@dataclass(frozen=True)
class Decomposition:
    """E = G @ Ebar with G full column rank (orthonormal when built by SVD)."""

    E: np.ndarray
    G: np.ndarray
    Ebar: np.ndarray
    g: int


def decompose_interconnection(couplings, C=None) -> Decomposition:
    """Factor the row-concatenated couplings E = [A_ij ...] as G @ Ebar.

    Thin SVD with a relative rank tolerance of 1e-10: G holds the leading
    left singular vectors and Ebar = diag(s) V^T. When ``C`` is given the
    unknown-input condition rank(C G) = g is enforced.
    """
    if isinstance(couplings, np.ndarray):
        E = np.atleast_2d(np.asarray(couplings, dtype=float))
    else:
        mats = [np.atleast_2d(np.asarray(a, dtype=float)) for a in couplings]
        if not mats:
            raise ModelError("at least one neighbor coupling is required")
        rows = {a.shape[0] for a in mats}
        if len(rows) != 1:
            raise ModelError("coupling matrices must share the row dimension")
        E = np.hstack(mats)
    if E.size == 0:
        raise ModelError("at least one neighbor coupling is required")
    U, s, Vt = np.linalg.svd(E, full_matrices=False)
    if s[0] == 0.0:
        raise ModelError("degenerate coupling: E is identically zero")
    g = int(np.sum(s > RANK_TOL * s[0]))
    G = U[:, :g]
    Ebar = s[:g, None] * Vt[:g]
    if C is not None:
        C = np.atleast_2d(np.asarray(C, dtype=float))
        CG = C @ G
        sv = np.linalg.svd(CG, compute_uv=False)
        if sv.size == 0 or int(np.sum(sv > RANK_TOL * max(sv[0], 1e-300))) < g or sv[0] == 0:
            raise ModelError("unknown-input condition failed (Assumption 1): rank(C G) < g")
    return Decomposition(E=E, G=G, Ebar=Ebar, g=g)


def gaussian_factor(S) -> np.ndarray:
    """Lower Cholesky factor of a PSD covariance, with 1e-12 jitter for singular ones."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.size == 0:
        return S.copy()
    S = 0.5 * (S + S.T)
    if not np.any(S):
        return np.zeros_like(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(S + 1e-12 * np.eye(S.shape[0]))


def lqr_output_gain(model: SubsystemModel, Q=None, R=None) -> np.ndarray:
    """Output-feedback gain u = Kc y from the discrete LQR of the isolated (A, B).

    With C = I this is exactly the LQR state feedback; otherwise the state
    gain is mapped through the pseudo-inverse of C.
    """
    n, q = model.n, model.q
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(q) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    P = sla.solve_discrete_are(model.A, model.B, Q, R)
    K = np.linalg.solve(R + model.B.T @ P @ model.B, model.B.T @ P @ model.A)
    return -K @ np.linalg.pinv(model.C)


@dataclass(frozen=True)
class CovertAttack:
    """Attacker model x_a+ = A x_a + B eta(k), gamma = C x_a, injected from ``k_start``.

    ``eta`` maps a step index to the actuator injection; it is only queried
    for k >= k_start, so x_a(k) = 0 for every k <= k_start.
    """

    target: int
    k_start: int
    eta: Callable[[int], object]

    def signal(self, k, q):
        if k < self.k_start:
            return np.zeros(q)
        return np.broadcast_to(np.asarray(self.eta(k), dtype=float), (q,)).astype(float)

    def attacker_states(self, model: SubsystemModel, steps: int) -> np.ndarray:
        xa = np.zeros((steps + 1, model.n))
        for k in range(steps):
            xa[k + 1] = model.A @ xa[k] + model.B @ self.signal(k, model.q)
        return xa


def sinusoidal_ramp_attack(target, sample_time=0.01, start_time=1.0, amplitude=3.0, rate=0.3,
                           frequency=2.0 / 30.0):
    """eta(k) = amp (1 - exp(-rate (k Ts - t_a))) sin(freq * pi * k Ts), from t_a on."""
    k_start = int(round(start_time / sample_time))

    def eta(k):
        t = k * sample_time
        return amplitude * (1.0 - math.exp(-rate * (t - start_time))) * math.sin(frequency * math.pi * t)

    return CovertAttack(target=int(target), k_start=k_start, eta=eta)


class Network:
    """Ordered collection of subsystems plus their local output-feedback gains."""

    def __init__(self, models: Sequence[SubsystemModel], controllers=None):
        self.models = tuple(models)
        self.ids = [mdl.id for mdl in self.models]
        if len(set(self.ids)) != len(self.ids):
            raise ModelError("duplicate subsystem id")
        self._pos = {i: p for p, i in enumerate(self.ids)}
        for mdl in self.models:
            for j, Aij in mdl.neighbors:
                if j not in self._pos:
                    raise ModelError(f"node {mdl.id} references unknown neighbor {j}")
                if Aij.shape[1] != self[j].n:
                    raise ModelError(f"coupling A_{mdl.id}{j} has wrong column count")
        controllers = dict(controllers or {})
        self.controllers = {}
        for mdl in self.models:
            Kc = controllers.get(mdl.id)
            Kc = lqr_output_gain(mdl) if Kc is None else np.atleast_2d(np.asarray(Kc, dtype=float))
            if Kc.shape != (mdl.q, mdl.m):
                raise ModelError(f"controller of node {mdl.id} must be {mdl.q}x{mdl.m}")
            self.controllers[mdl.id] = Kc
        self._decomp = {}

    def __getitem__(self, node_id) -> SubsystemModel:
        return self.models[self._pos[node_id]]

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def position(self, node_id):
        return self._pos[node_id]

    def decomposition(self, node_id) -> Decomposition:
        if node_id not in self._decomp:
            mdl = self[node_id]
            self._decomp[node_id] = decompose_interconnection([a for _, a in mdl.neighbors], mdl.C)
        return self._decomp[node_id]

    def with_models(self, models):
        return Network(models, self.controllers)

    def closed_loop_matrix(self):
        """Nominal network closed-loop matrix under u = Kc C x."""
        plan = build_plan(self)
        return plan.A + plan.B @ plan.Kc @ plan.C

    @classmethod
    def from_dict(cls, doc):
        """Build from the JSON network document (see README for the schema)."""
        try:
            nodes = doc["nodes"]
            edges = doc.get("edges", [])
            couplings = {int(nd["id"]): [] for nd in nodes}
            for e in edges:
                couplings[int(e["to"])].append((int(e["from"]), e["A"]))
            models, ctrls = [], {}
            for nd in nodes:
                i = int(nd["id"])
                A = np.array(nd["A"], dtype=float, ndmin=2)
                n = A.shape[0]
                C = nd.get("C", np.eye(n).tolist())
                m = np.array(C, ndmin=2).shape[0]
                models.append(SubsystemModel(
                    id=i, A=A, B=nd["B"], C=C, neighbors=couplings[i],
                    sigma_w=nd.get("sigma_w", np.eye(n).tolist()),
                    sigma_v=nd.get("sigma_v", np.eye(m).tolist()),
                    sigma_x0=nd.get("sigma_x0", np.eye(n).tolist()),
                ))
                if "controller" in nd:
                    ctrls[i] = nd["controller"]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed network document: {exc!r}") from exc
        return cls(models, ctrls)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        nodes, edges = [], []
        for mdl in self.models:
            nodes.append(dict(id=mdl.id, A=mdl.A.tolist(), B=mdl.B.tolist(), C=mdl.C.tolist(),
                              sigma_w=mdl.sigma_w.tolist(), sigma_v=mdl.sigma_v.tolist(),
                              sigma_x0=mdl.sigma_x0.tolist(),
                              controller=self.controllers[mdl.id].tolist()))
            for j, Aij in mdl.neighbors:
                edges.append({"from": j, "to": mdl.id, "A": Aij.tolist()})
        return {"nodes": nodes, "edges": edges}


@dataclass
class NetworkTrajectory:
    """Per-node sequences over steps 0..steps (inputs are the applied u~)."""

    node_ids: list
    states: dict
    measurements: dict
    inputs: dict
    attacker_states: dict
    steps: int
    seed: int

    def to_csv(self, path):
        nmax = max(v.shape[1] for v in self.states.values())
        mmax = max(v.shape[1] for v in self.measurements.values())
        header = ["step", "node"] + [f"x{i}" for i in range(nmax)] + [f"y{i}" for i in range(mmax)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for k in range(self.steps + 1):
                for nid in self.node_ids:
                    xs = [f"{v:.9g}" for v in self.states[nid][k]]
                    ys = [f"{v:.9g}" for v in self.measurements[nid][k]]
                    xs += [""] * (nmax - len(xs))
                    ys += [""] * (mmax - len(ys))
                    wr.writerow([k, nid] + xs + ys)


@dataclass
class RolloutPlan:
    """Stacked network matrices consumed by the rollout kernels."""

    network: Network
    A: np.ndarray
    Aloc: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Kc: np.ndarray
    Abar: np.ndarray
    Lbar: np.ndarray
    H: np.ndarray
    P: np.ndarray
    Lw: np.ndarray
    Lv: np.ndarray
    Lalpha: np.ndarray
    Lx0: np.ndarray
    xslices: dict
    yslices: dict
    uslices: dict
    attacks: tuple = ()

    @property
    def mats(self):
        return (self.A, self.Aloc, self.B, self.C, self.Kc, self.Abar, self.Lbar, self.H, self.P)

    def attack_profile(self, steps):
        """Deterministic eta(k) for k = 0..steps-1 and x_a(k) for k = 0..steps, stacked."""
        eta = np.zeros((steps, self.B.shape[1]))
        xa = np.zeros((steps + 1, self.A.shape[0]))
        for atk in self.attacks:
            mdl = self.network[atk.target]
            us, xs = self.uslices[atk.target], self.xslices[atk.target]
            for k in range(steps):
                eta[k, us] += atk.signal(k, mdl.q)
            xa[:, xs] += atk.attacker_states(mdl, steps)
        return eta, xa


def build_plan(network: Network, gains=None, schedules=None, attacks=()) -> RolloutPlan:
    """Assemble the stacked matrices of a rollout.

    ``gains`` maps node id to a filter-gain object (attributes Abar, Lbar, M, G);
    without it the estimator blocks are zero. ``schedules`` maps a receiving
    node id to its privacy schedule (``blocks`` in neighbor order).
    """
    gains = gains or {}
    schedules = schedules or {}
    xs, ys, us = {}, {}, {}
    nx = ny = nu = 0
    for mdl in network:
        xs[mdl.id] = slice(nx, nx + mdl.n)
        ys[mdl.id] = slice(ny, ny + mdl.m)
        us[mdl.id] = slice(nu, nu + mdl.q)
        nx, ny, nu = nx + mdl.n, ny + mdl.m, nu + mdl.q
    npriv = sum(network[j].n for mdl in network for j in mdl.neighbor_ids)
    A = np.zeros((nx, nx))
    Aloc = np.zeros((nx, nx))
    B = np.zeros((nx, nu))
    C = np.zeros((ny, nx))
    Kc = np.zeros((nu, ny))
    Abar = np.zeros((nx, nx))
    Lbar = np.zeros((nx, ny))
    H = np.zeros((ny, npriv))
    P = np.zeros((ny, ny))
    Lw = np.zeros((nx, nx))
    Lv = np.zeros((ny, ny))
    Lx0 = np.zeros((nx, nx))
    La = np.zeros((npriv, npriv))
    col = 0
    for mdl in network:
        i = mdl.id
        X, Y, U = xs[i], ys[i], us[i]
        A[X, X] = mdl.A
        Aloc[X, X] = mdl.A
        B[X, U] = mdl.B
        C[Y, X] = mdl.C
        Kc[U, Y] = network.controllers[i]
        Lw[X, X] = gaussian_factor(mdl.sigma_w)
        Lv[Y, Y] = gaussian_factor(mdl.sigma_v)
        Lx0[X, X] = gaussian_factor(mdl.sigma_x0)
        gi = gains.get(i)
        if gi is not None:
            Abar[X, X] = gi.Abar
            Lbar[X, Y] = gi.Lbar
            P[Y, Y] = np.eye(mdl.m) - mdl.C @ gi.G @ gi.M
        sched = schedules.get(i)
        for idx, (j, Aij) in enumerate(mdl.neighbors):
            A[X, xs[j]] = Aij
            nj = network[j].n
            H[Y, col:col + nj] = mdl.C @ Aij
            if sched is not None:
                La[col:col + nj, col:col + nj] = gaussian_factor(sched.blocks[idx])
            col += nj
    for atk in attacks:
        if atk.target not in xs:
            raise ModelError(f"attack targets unknown node {atk.target}")
    return RolloutPlan(network=network, A=A, Aloc=Aloc, B=B, C=C, Kc=Kc, Abar=Abar, Lbar=Lbar, H=H, P=P,
                       Lw=Lw, Lv=Lv, Lalpha=La, Lx0=Lx0, xslices=xs, yslices=ys, uslices=us,
                       attacks=tuple(attacks))


_CHUNK_FLOATS = 4_000_000


def _rollout_block(plan, trials, steps, rec, n_rec, rng, advance):
    nx, ny, nu, npv = plan.A.shape[0], plan.C.shape[0], plan.B.shape[1], plan.H.shape[1]
    eta, xa = plan.attack_profile(steps)
    x = rng.standard_normal((trials, nx)) @ plan.Lx0.T
    v0 = rng.standard_normal((trials, ny)) @ plan.Lv.T
    y0 = x @ plan.C.T + v0
    xh = np.zeros((trials, nx))
    u = y0 @ plan.Kc.T
    out = {
        "z": np.zeros((trials, n_rec, ny)),
        "r": np.zeros((trials, n_rec, ny)),
        "x": np.zeros((trials, n_rec, nx)),
        "y": np.zeros((trials, n_rec, ny)),
        "u": np.zeros((trials, n_rec, nu)),
        "x0": x.copy(),
        "y0": y0,
        "u0": u.copy(),
    }
    per_step = trials * (nx + ny + npv)
    chunk = max(1, min(steps, _CHUNK_FLOATS // max(per_step, 1)))
    k = 0
    while k < steps:
        s = min(chunk, steps - k)
        w = rng.standard_normal((trials, s, nx)) @ plan.Lw.T
        v = rng.standard_normal((trials, s, ny)) @ plan.Lv.T
        al = rng.standard_normal((trials, s, npv)) @ plan.Lalpha.T if npv else np.zeros((trials, s, 0))
        x, xh, u, div = advance(plan.mats, x, xh, u, eta[k:k + s], xa[k + 1:k + 1 + s], w, v, al,
                                rec[k:k + s], out["z"], out["r"], out["x"], out["y"], out["u"],
                                DIVERGENCE_LIMIT)
        if div >= 0:
            raise DivergenceError(k + div + 1)
        k += s
    return out


def rollout(plan: RolloutPlan, trials: int, steps: int, record_steps=None, seed: int = 0,
            block_size: int = 20_000, backend=None, keep=None):
    """Run ``trials`` independent rollouts of ``steps`` steps.

    Returns a dict of arrays recorded at ``record_steps`` (1-based step
    indices; default: every step): residual ``z``, local residual ``r``,
    state ``x``, measurement ``y`` and controller output ``u``, each shaped
    (trials, len(record_steps), dim). Trials run in blocks; block b draws
    from ``SeedSequence([seed, b])`` so results do not depend on how blocks
    are scheduled. ``keep`` maps field names to column slices (or None for
    all columns) to retain only what the caller needs.
    """
    if trials < 1 or steps < 1:
        raise ValueError("trials and steps must be positive")
    record_steps = list(range(1, steps + 1)) if record_steps is None else [int(k) for k in record_steps]
    if any(k < 1 or k > steps for k in record_steps):
        raise ValueError("record steps must lie in 1..steps")
    rec = -np.ones(steps, dtype=np.int64)
    for slot, k in enumerate(record_steps):
        rec[k - 1] = slot
    advance = {None: kernels.advance, "numba": kernels.advance_numba,
               "numpy": kernels.advance_numpy}[backend]
    parts = []
    for b, start in enumerate(range(0, trials, block_size)):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        part = _rollout_block(plan, min(block_size, trials - start), steps, rec,
                              len(record_steps), rng, advance)
        if keep is not None:
            part = {f: (part[f] if sl is None else part[f][..., sl]) for f, sl in keep.items()}
        parts.append(part)
    out = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    out["steps"] = np.asarray(record_steps)
    return out


def simulate(network: Network, controllers=None, attacks=(), steps: int = 100, seed: int = 0,
             gains=None, schedules=None, backend=None) -> NetworkTrajectory:
    """Single closed-loop rollout of the network, returned per node."""
    if controllers is not None:
        network = Network(network.models, controllers)
    plan = build_plan(network, gains=gains, schedules=schedules, attacks=attacks)
    out = rollout(plan, 1, steps, None, seed=seed, backend=backend)
    eta, xa = plan.attack_profile(steps)
    X = np.vstack([out["x0"], out["x"][0]])
    Y = np.vstack([out["y0"], out["y"][0]])
    U = np.vstack([out["u0"], out["u"][0]])
    U[:steps] += eta
    states, meas, inputs, atk = {}, {}, {}, {}
    for mdl in network:
        i = mdl.id
        states[i] = X[:, plan.xslices[i]]
        meas[i] = Y[:, plan.yslices[i]]
        inputs[i] = U[:, plan.uslices[i]]
        atk[i] = xa[:, plan.xslices[i]]
    return NetworkTrajectory(node_ids=list(network.ids), states=states, measurements=meas, inputs=inputs,
                             attacker_states=atk, steps=steps, seed=seed)
