"""Invariant and agreement checks shared by the CLI ``validate`` command and the test suite.

Each check returns a :class:`CheckResult`. ``expected`` marks a check whose
failure is a known property of the model rather than a defect; such a check
is reported as ``expected-fail`` when it fails and counts as a failure only
if it unexpectedly passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import specfun
from .bench_cli import Scenario, build_pendulum_benchmark, secondary_residuals, steady_state_start
from .detect import (
    adaptive_pd,
    adaptive_pd_real,
    adaptive_pfa,
    adaptive_threshold,
    detection_probability,
    glrt_statistic,
    noncentrality,
    residual_covariance,
    threshold_from_pfa,
    whitened_spectrum,
)
from .noise_design import design_fa_constrained, design_weighted, mi_gradient, total_mi
from .privacy_mi import build_stacked, joint_covariance
from .sysmodel import Network, SubsystemModel, build_plan, rollout, sinusoidal_ramp_attack
from .umv_filter import FilterDesignError

__all__ = ["CheckResult", "random_network", "pendulum_scenario", "run_suite", "CHECKS"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    expected_fail: bool = False

    @property
    def status(self):
        if self.expected_fail:
            return "expected-fail" if not self.passed else "unexpected-pass"
        return "pass" if self.passed else "fail"

    @property
    def ok(self):
        return self.passed != self.expected_fail

    def line(self):
        word = "PASS" if self.passed else "FAIL"
        note = " (known deviation)" if self.expected_fail else ""
        return f"[{word}] {self.name}: value={self.value:.6g} tol={self.tolerance:.6g}{note} {self.detail}".rstrip()


def _sigma(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def pendulum_scenario(receiver=2, attacked=True):
    net, gains = build_pendulum_benchmark()
    atk = sinusoidal_ramp_attack(3) if attacked else None
    return Scenario(net, gains, 0.01, atk, receiver)


def _random_pd(rng, n, scale=1.0, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = scale * np.exp(rng.uniform(0.0, math.log(cond), n))
    return (Q * w) @ Q.T


def random_network(rng, n_nodes=3, dims=(2, 3), rank_one_prob=0.5, max_tries=50):
    """Ring of ``n_nodes`` subsystems with invertible C (so the unknown-input condition holds).

    State dimensions and coupling ranks are drawn at random, so C E is full
    row rank for some nodes and rank deficient for others.
    """
    for _ in range(max_tries):
        ns = [int(rng.choice(dims)) for _ in range(n_nodes)]
        models = []
        for i, n in enumerate(ns):
            A = rng.standard_normal((n, n))
            A *= rng.uniform(0.5, 1.05) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
            C = np.eye(n) + 0.3 * rng.standard_normal((n, n))
            nbrs = []
            for j in sorted({(i - 1) % n_nodes, (i + 1) % n_nodes} - {i}):
                if rng.uniform() < rank_one_prob:
                    Aij = 0.2 * np.outer(rng.standard_normal(n), rng.standard_normal(ns[j]))
                else:
                    Aij = 0.2 * rng.standard_normal((n, ns[j]))
                nbrs.append((j, Aij))
            models.append(SubsystemModel(
                id=i, A=A, B=rng.standard_normal((n, 1)), C=C, neighbors=nbrs,
                sigma_w=_random_pd(rng, n, 1e-3), sigma_v=_random_pd(rng, n, 1e-3),
                sigma_x0=_random_pd(rng, n, 1e-2)))
        try:
            net = Network(models, {m.id: np.zeros((1, m.n)) for m in models})
            return steady_state_start(net)
        except FilterDesignError:
            continue
    raise RuntimeError("could not draw a random network with stable filters")


# 1
def check_threshold():
    tau = threshold_from_pfa(2, 0.25)
    return CheckResult("1 threshold tau(m=2, p_f=0.25)", abs(tau - 2.7726) <= 5e-4, tau, 5e-4,
                       f"expected 2.7726, |diff|={abs(tau - 2.7726):.2e}")


# 2
def check_false_alarm(trials=100_000, seed=0, kappa=1.0, step=30):
    scn = pendulum_scenario(attacked=False)
    ctx = scn.context(5)
    sched, _ = design_weighted(ctx, kappa)
    res = ctx.residual.with_schedule(sched.blocks)
    tau = threshold_from_pfa(res.m, 0.25)
    plan = scn.plan(sched, attacked=False)
    z = rollout(plan, trials, step, [step], seed=seed, keep={"z": plan.yslices[2]})["z"][:, 0]
    emp = float(np.mean(glrt_statistic(z, res.sigma_zp) > tau))
    return CheckResult("2 matched-detector false alarm under privacy noise", abs(emp - 0.25) <= 0.012, emp,
                       0.012, f"target 0.25, trials={trials}, binomial sigma={_sigma(0.25, trials):.4f}")


# 3
def check_mismatch_inflation(n_networks=100, samples=10_000, seed=0):
    rng = np.random.default_rng(seed)
    worst_min, strict_fail, emp_fail, strict_cases = math.inf, 0, 0, 0
    tau = threshold_from_pfa(2, 0.25)
    for _ in range(n_networks):
        net, gains = random_network(rng)
        mdl = net[0]
        res0 = residual_covariance(mdl, gains[0], [gains[j] for j in mdl.neighbor_ids])
        blocks = [_random_pd(rng, net[j].n, 10 ** rng.uniform(-4, -2)) for j in mdl.neighbor_ids]
        res = res0.with_schedule(blocks)
        lam = whitened_spectrum(res)
        worst_min = min(worst_min, float(lam.min()) - 1.0)
        if np.linalg.matrix_rank(res.CE, tol=1e-10 * max(1.0, np.abs(res.CE).max())) == res.m:
            strict_cases += 1
            if not lam.min() > 1.0:
                strict_fail += 1
        z = rng.standard_normal((samples, res.m)) @ np.linalg.cholesky(res.sigma_zp).T
        p_mat = float(np.mean(glrt_statistic(z, res.sigma_zp) > tau))
        p_mis = float(np.mean(glrt_statistic(z, res.sigma_z) > tau))
        if p_mis < p_mat - 2 * _sigma(p_mat, samples):
            emp_fail += 1
    ok = worst_min >= -1e-10 and strict_fail == 0 and emp_fail == 0
    return CheckResult("3 mismatched covariance only inflates the statistic", ok, worst_min, 1e-10,
                       f"min eig - 1 over {n_networks} networks; strict cases {strict_cases}, "
                       f"strict failures {strict_fail}, empirical failures {emp_fail}")


# 4
def check_tradeoff(kappas=(0.01, 0.1, 1.0, 10.0), pairs=50, seed=0, delay=50):
    scn = pendulum_scenario()
    ctx = scn.context(5)
    k = scn.attack.k_start + delay
    xa = scn.neighbor_attack_states(k - 1)
    tau = threshold_from_pfa(2, 0.25)
    mis, pds = [], []
    for kap in kappas:
        sched, _ = design_weighted(ctx, kap)
        res = ctx.residual.with_schedule(sched.blocks)
        mis.append(total_mi(ctx, sched))
        pds.append(detection_probability(2, tau, noncentrality(res, xa)))
    mono = all(b > a for a, b in zip(mis, mis[1:])) and all(b > a for a, b in zip(pds, pds[1:]))
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(pairs):
        b = [_random_pd(rng, d, 10 ** rng.uniform(-4, -1)) for d in ctx.dims]
        a = [bb + _random_pd(rng, bb.shape[0], 10 ** rng.uniform(-4, -1)) for bb in b]
        xs = [rng.standard_normal(d) for d in ctx.dims]
        ca = noncentrality(ctx.residual.with_schedule(a), xs)
        cb = noncentrality(ctx.residual.with_schedule(b), xs)
        worst = max(worst, total_mi(ctx, a) - total_mi(ctx, b), ca - cb)
    ok = mono and worst <= 1e-9
    return CheckResult("4 privacy/detection trade-off in kappa and PSD order", ok, worst, 1e-9,
                       "MI " + ",".join(f"{v:.4g}" for v in mis) + "; P_d " + ",".join(f"{v:.4g}" for v in pds))


def _sym_sqrt(S):
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(w)) @ V.T


# 5
def check_commuting_order(samples=10_000, seed=0, scales=(0.25, 0.5, 1.0, 2.0, 4.0)):
    rng = np.random.default_rng(seed)
    dim = 2
    for _ in range(50):
        A = 0.9 * np.eye(dim) + 0.05 * rng.standard_normal((dim, dim))
        Aij = 0.3 * rng.standard_normal((dim, dim))
        m0 = SubsystemModel(0, A, np.ones((dim, 1)), np.eye(dim) + 0.2 * rng.standard_normal((dim, dim)),
                            [(1, Aij)], 1e-3 * np.eye(dim), 1e-3 * np.eye(dim), 1e-2 * np.eye(dim))
        m1 = SubsystemModel(1, A, np.ones((dim, 1)), np.eye(dim), [(0, Aij)], 1e-3 * np.eye(dim),
                            1e-3 * np.eye(dim), 1e-2 * np.eye(dim))
        try:
            net, gains = steady_state_start(Network([m0, m1], {0: np.zeros((1, dim)), 1: np.zeros((1, dim))}))
            break
        except FilterDesignError:
            continue
    else:
        raise RuntimeError("could not draw a two-node network with stable filters")
    mdl = net[0]
    base = residual_covariance(mdl, gains[0], [gains[1]])
    CEi = np.linalg.inv(base.CE)
    phi = rng.standard_normal((samples, dim))
    stats_by_s = []
    for s in scales:
        res = base.with_schedule([s * CEi @ base.sigma_z @ CEi.T])
        z = phi @ _sym_sqrt(res.sigma_zp).T
        stats_by_s.append(glrt_statistic(z, res.sigma_z))
        assert np.allclose(res.sigma_p, s * base.sigma_z, rtol=1e-8, atol=1e-14)
    worst = math.inf
    for a in range(len(scales)):
        for b in range(a):
            worst = min(worst, float(np.min(stats_by_s[a] - stats_by_s[b])))
    return CheckResult("5 commuting privacy noise orders the mismatched statistic", worst > 0, worst, 0.0,
                       f"min pointwise gap over {samples} samples, scales {scales}, C E full row rank")


# 6
def check_fa_constrained(trials=100_000, seed=0, nus=(0.02, 0.05, 0.10), p_f=0.25, step=30):
    scn = pendulum_scenario(attacked=False)
    ctx = scn.context(5)
    tau = threshold_from_pfa(2, p_f)
    mis, worst, feas = [], -math.inf, math.inf
    rates = []
    for i, nu in enumerate(nus):
        sched, rep = design_fa_constrained(ctx, p_f, nu)
        feas = min(feas, rep.feasibility_margins["fa_constraint"])
        res = ctx.residual.with_schedule(sched.blocks)
        plan = scn.plan(sched, attacked=False)
        z = rollout(plan, trials, step, [step], seed=seed + i, keep={"z": plan.yslices[2]})["z"][:, 0]
        emp = float(np.mean(glrt_statistic(z, res.sigma_z) > tau))
        cap = p_f + nu
        worst = max(worst, emp - cap - 3 * _sigma(cap, trials))
        mis.append(total_mi(ctx, sched))
        rates.append(emp)
    mono = all(b <= a for a, b in zip(mis, mis[1:]))
    ok = feas > 0 and worst <= 0 and mono
    return CheckResult("6 false-alarm-constrained design", ok, worst, 0.0,
                       f"max(emp - cap - 3 sigma); rates {','.join(f'{r:.4f}' for r in rates)}; "
                       f"MI {','.join(f'{v:.4g}' for v in mis)}; min margin {feas:.3g}")


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


# 7
def check_adaptive_pfa(trials=100_000, seed=0, m=2, K_star=24, tau_s=3.0, p_f=0.25):
    """Closed-form adaptive P_f at ``tau_s`` on real Gaussian data, plus at the p_f threshold on
    circular complex data (where the closed form is exact and the rate is far from zero)."""
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(_random_pd(rng, m, 1.0))
    sec = rng.standard_normal((trials, K_star, m)) @ L.T
    z = rng.standard_normal((trials, m)) @ L.T
    S = np.einsum("tki,tkj->tij", sec, sec)
    t = np.einsum("ti,ti->t", z, np.linalg.solve(S, z[..., None])[..., 0])
    emp = float(np.mean(t > tau_s - 1.0))
    pf = adaptive_pfa(m, K_star, tau_s)
    tau_c = adaptive_threshold(m, K_star, p_f)
    sec = _cn(rng, trials, K_star, m) @ L.T
    z = _cn(rng, trials, m) @ L.T
    S = np.einsum("tki,tkj->tij", sec, sec.conj())
    t = np.einsum("ti,ti->t", z.conj(), np.linalg.solve(S, z[..., None])[..., 0]).real
    emp_c = float(np.mean(t > tau_c - 1.0))
    pf_c = adaptive_pfa(m, K_star, tau_c)
    worst = max(abs(emp - pf), abs(emp_c - pf_c))
    return CheckResult("7a adaptive false alarm closed form vs Monte Carlo", worst <= 0.005, worst, 0.005,
                       f"m={m} K*={K_star}: tau={tau_s} analytic {pf:.3g} empirical {emp:.3g}; "
                       f"complex data tau={tau_c:.4f} analytic {pf_c:.4f} empirical {emp_c:.4f}")


def check_adaptive_cfar(trials=100_000, seed=0, m=2, K_star=24, p_f=0.25):
    rng = np.random.default_rng(seed)
    tau_s = adaptive_threshold(m, K_star, p_f)
    rates = []
    for scale in (1e-3, 1.0, 1e2):
        L = np.linalg.cholesky(_random_pd(rng, m, scale, cond=50.0))
        sec = rng.standard_normal((trials, K_star, m)) @ L.T
        z = rng.standard_normal((trials, m)) @ L.T
        S = np.einsum("tki,tkj->tij", sec, sec)
        t = np.einsum("ti,ti->t", z, np.linalg.solve(S, z[..., None])[..., 0])
        rates.append(float(np.mean(t > tau_s - 1.0)))
    spread = max(rates) - min(rates)
    return CheckResult("7b adaptive false alarm independent of the covariance", spread <= 0.005, spread, 0.005,
                       "rates " + ",".join(f"{r:.4f}" for r in rates))


def check_adaptive_consistency(m=2, K_star=24):
    worst = 0.0
    for tau_s in (1.05, adaptive_threshold(m, K_star, 0.25), 3.0, 10.0):
        worst = max(worst, abs(adaptive_pd(m, K_star, tau_s, 0.0) - adaptive_pfa(m, K_star, tau_s)))
    return CheckResult("7c adaptive P_d at c=0 equals P_f", worst <= 1e-6, worst, 1e-6)


def check_adaptive_monotone(m=2, K_star=24, tau_s=3.0):
    vals = [adaptive_pd(m, K_star, tau_s, float(c)) for c in range(0, 21)]
    gaps = np.diff(vals)
    return CheckResult("7d adaptive P_d strictly increasing in c", bool(np.all(gaps > 0)), float(gaps.min()), 0.0,
                       f"P_d(0)={vals[0]:.3g}, P_d(20)={vals[-1]:.3g}")


def _pendulum_adaptive(trials, seed, kappa, K_star, p_f, delay):
    scn = pendulum_scenario()
    ctx = scn.context(5)
    sched, _ = design_weighted(ctx, kappa)
    res = ctx.residual.with_schedule(sched.blocks)
    tau_s = adaptive_threshold(res.m, K_star, p_f)
    k = scn.attack.k_start + delay
    c = noncentrality(res, scn.neighbor_attack_states(k - 1))
    plan = scn.plan(sched)
    z = rollout(plan, trials, k, [k], seed=seed, keep={"z": plan.yslices[2]})["z"][:, 0]
    sec = secondary_residuals(scn, sched, trials, K_star, seed + 1)
    S = np.einsum("tki,tkj->tij", sec, sec)
    t = np.einsum("ti,ti->t", z, np.linalg.solve(S, z[..., None])[..., 0])
    return float(np.mean(t > tau_s - 1.0)), res.m, tau_s, c


def check_adaptive_pd_closed_form(trials=20_000, seed=0, kappa=10.0, K_star=24, p_f=0.25, delay=50):
    """Closed-form adaptive P_d against the detector run on the network's (real-valued) residuals."""
    emp, m, tau_s, c = _pendulum_adaptive(trials, seed, kappa, K_star, p_f, delay)
    pd = adaptive_pd(m, K_star, tau_s, c)
    dev = abs(emp - pd) / max(_sigma(pd, trials), 1e-12)
    return CheckResult("7e adaptive empirical P_d (network residuals) vs closed form", dev <= 3.0, dev, 3.0,
                       f"analytic {pd:.4f}, empirical {emp:.4f}, c={c:.3g}, tau={tau_s:.4f}; deviation in sigmas",
                       expected_fail=True)


def check_adaptive_pd_complex(trials=100_000, seed=0, m=2, K_star=24, p_f=0.25, cs=(1.0, 5.0)):
    """Closed-form adaptive P_d against circular complex Gaussian data, for which it is exact."""
    rng = np.random.default_rng(seed)
    tau_s = adaptive_threshold(m, K_star, p_f)
    Sig = _random_pd(rng, m, 1.0)
    L = np.linalg.cholesky(Sig)
    worst, parts = 0.0, []
    for c in cs:
        d = rng.standard_normal(m)
        a = L @ d * math.sqrt(c) / np.linalg.norm(d)
        sec = _cn(rng, trials, K_star, m) @ L.T
        z = a + _cn(rng, trials, m) @ L.T
        S = np.einsum("tki,tkj->tij", sec, sec.conj())
        t = np.einsum("ti,ti->t", z.conj(), np.linalg.solve(S, z[..., None])[..., 0]).real
        emp = float(np.mean(t > tau_s - 1.0))
        pd = adaptive_pd(m, K_star, tau_s, c)
        dev = abs(emp - pd) / _sigma(pd, trials)
        worst = max(worst, dev)
        parts.append(f"c={c:g}: {pd:.4f} vs {emp:.4f}")
    return CheckResult("7f adaptive P_d closed form vs complex-data Monte Carlo", worst <= 3.0, worst, 3.0,
                       "; ".join(parts) + "; deviation in sigmas")


def check_adaptive_pd_real(trials=20_000, seed=0, kappa=10.0, K_star=24, p_f=0.25, delay=50):
    emp, m, tau_s, c = _pendulum_adaptive(trials, seed, kappa, K_star, p_f, delay)
    pd = adaptive_pd_real(m, K_star, tau_s, c)
    dev = abs(emp - pd) / _sigma(pd, trials)
    return CheckResult("7g adaptive empirical P_d (network residuals) vs exact real-data law", dev <= 3.0, dev, 3.0,
                       f"analytic {pd:.4f}, empirical {emp:.4f}; deviation in sigmas")


def joint_cov_monte_carlo(samples=100_000, K=3, seed=0, node=2):
    """Empirical joint covariance of (x(1..K), theta(1..K)) for one node driven by known inputs."""
    net, gains = build_pendulum_benchmark()
    mdl, g = net[node], gains[node]
    rng = np.random.default_rng(seed)
    sa = _random_pd(rng, mdl.n, 1e-3)
    n = mdl.n
    x = rng.standard_normal((samples, n)) @ np.linalg.cholesky(mdl.sigma_x0).T
    xh = np.zeros((samples, n))
    Lw, Lv, La = (np.linalg.cholesky(S) for S in (mdl.sigma_w, mdl.sigma_v, sa))
    xs, th = [], []
    for k in range(K):
        u = np.array([0.5 * math.sin(k + 1.0)])
        xi = g.G.T @ np.array([0.0, 0.2 * (k + 1)])
        w = rng.standard_normal((samples, n)) @ Lw.T
        v = rng.standard_normal((samples, mdl.m)) @ Lv.T
        pred = xh @ mdl.A.T + u @ mdl.B.T
        x = x @ mdl.A.T + u @ mdl.B.T + g.G @ xi + w
        y = x @ mdl.C.T + v
        xh = pred @ g.Abar.T + y @ g.Lbar.T
        xs.append(x)
        th.append(xh + rng.standard_normal((samples, n)) @ La.T)
    emp = np.cov(np.hstack(xs + th).T)
    jc = joint_covariance(build_stacked(mdl, g, K), mdl, g, sa)
    return emp, jc.joint()


# 8
def check_joint_cov(samples=100_000, K=3, seed=0, z_max=4.5):
    """Joint covariance against Monte Carlo, error scaled by sqrt(S_ii S_jj), plus a z-score bound
    using the sampling standard error sqrt((S_ii S_jj + S_ij^2) / n) of each entry."""
    emp, ana = joint_cov_monte_carlo(samples, K, seed)
    d = np.sqrt(np.diag(ana))
    err = np.abs(emp - ana) / np.outer(d, d)
    se = np.sqrt((np.outer(d, d) ** 2 + ana ** 2) / samples)
    z = float(np.max(np.abs(emp - ana) / se))
    ok = float(err.max()) <= 0.05 and z <= z_max
    return CheckResult("8 joint covariance vs Monte Carlo", ok, float(err.max()), 0.05,
                       f"error scaled by sqrt(S_ii S_jj); max |z| over entries {z:.2f} (bound {z_max})")


def check_joint_cov_entrywise(samples=100_000, K=3, seed=0):
    """Plain entrywise relative error over every entry, including nearly uncorrelated ones."""
    emp, ana = joint_cov_monte_carlo(samples, K, seed)
    rel = np.abs(emp - ana) / np.abs(ana)
    i, j = np.unravel_index(int(np.argmax(rel)), rel.shape)
    corr = ana[i, j] / math.sqrt(ana[i, i] * ana[j, j])
    return CheckResult("8b joint covariance plain entrywise relative error", float(rel.max()) <= 0.05,
                       float(rel.max()), 0.05,
                       f"worst entry ({i},{j}) has correlation {corr:.3g}; sampling error of a correlation "
                       f"is about {1 / math.sqrt(samples):.1e}", expected_fail=True)


# 9
def check_gradient(points=20, seed=0, h=1e-6):
    scn = pendulum_scenario()
    ctx = scn.context(5)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        blocks = [_random_pd(rng, d, 10 ** rng.uniform(-3, -1)) for d in ctx.dims]
        grads = mi_gradient(ctx, blocks)
        for b, (B, G) in enumerate(zip(blocks, grads)):
            n = B.shape[0]
            fd = np.zeros_like(G)
            for i in range(n):
                for j in range(i + 1):
                    E = np.zeros((n, n))
                    E[i, j] = E[j, i] = h
                    up = [x if t != b else B + E for t, x in enumerate(blocks)]
                    dn = [x if t != b else B - E for t, x in enumerate(blocks)]
                    val = (total_mi(ctx, up) - total_mi(ctx, dn)) / (2 * h)
                    fd[i, j] = fd[j, i] = val if i == j else 0.5 * val
            worst = max(worst, float(np.max(np.abs(G - fd)) / np.max(np.abs(fd))))
    return CheckResult("9 analytic MI gradient vs central differences", worst < 1e-5, worst, 1e-5,
                       f"{points} random points, step {h:g}, error relative to the block's largest entry")


# 10
def check_covertness(trials=10_000, seed=0, delay=30, p_f=0.25):
    net, gains = build_pendulum_benchmark()
    atk = sinusoidal_ramp_attack(3)
    k = atk.k_start + delay
    plan = build_plan(net, gains, None, [atk])
    out = rollout(plan, trials, k, [k], seed=seed, keep={"z": None, "r": None})
    mdl, g = net[3], gains[3]
    r = out["r"][:, 0, plan.yslices[3]]
    P = np.eye(mdl.m) - mdl.C @ g.G @ g.M
    Sr = P @ (mdl.C @ mdl.A @ g.sigma_e_ss @ mdl.A.T @ mdl.C.T + mdl.C @ mdl.sigma_w @ mdl.C.T + mdl.sigma_v) @ P.T
    w, V = np.linalg.eigh(0.5 * (Sr + Sr.T))
    keep = w > 1e-10 * w.max()
    q = np.sum(((r @ V[:, keep]) ** 2) / w[keep], axis=1)
    dof = int(keep.sum())
    ks = stats.kstest(q, lambda x: np.array([specfun.chi2_cdf(dof, float(v)) for v in np.atleast_1d(x)]))
    tau = threshold_from_pfa(2, p_f)
    parts, worst_dev, mean_ok = [], 0.0, True
    for node in (2, 4):
        mdl_i = net[node]
        res = residual_covariance(mdl_i, gains[node], [gains[j] for j in mdl_i.neighbor_ids])
        xa = [atk.attacker_states(net[j], k - 1)[k - 1] if j == 3 else np.zeros(net[j].n)
              for j in mdl_i.neighbor_ids]
        c = noncentrality(res, xa, use_privacy=False)
        pd = detection_probability(2, tau, c)
        z = out["z"][:, 0, plan.yslices[node]]
        emp = float(np.mean(glrt_statistic(z, res.sigma_z) > tau))
        dev = abs(emp - pd) / _sigma(pd, trials)
        worst_dev = max(worst_dev, dev)
        se = z.std(axis=0, ddof=1) / math.sqrt(trials)
        mean_ok = mean_ok and bool(np.max(np.abs(z.mean(axis=0)) / se) > 3.0)
        parts.append(f"node {node}: P_d {pd:.4f} vs {emp:.4f}")
    ok = ks.pvalue >= 0.01 and worst_dev <= 3.0 and mean_ok
    return CheckResult("10 attack covert locally, visible to neighbors", ok, float(ks.pvalue), 0.01,
                       f"KS p-value of the attacked node's local residual (dof {dof}); " + "; ".join(parts)
                       + f"; max deviation {worst_dev:.2f} sigma; neighbor mean shift > 3 SE: {mean_ok}")


CHECKS = {
    "1": check_threshold,
    "2": check_false_alarm,
    "3": check_mismatch_inflation,
    "4": check_tradeoff,
    "5": check_commuting_order,
    "6": check_fa_constrained,
    "7a": check_adaptive_pfa,
    "7b": check_adaptive_cfar,
    "7c": check_adaptive_consistency,
    "7d": check_adaptive_monotone,
    "7e": check_adaptive_pd_closed_form,
    "7f": check_adaptive_pd_complex,
    "7g": check_adaptive_pd_real,
    "8": check_joint_cov,
    "8b": check_joint_cov_entrywise,
    "9": check_gradient,
    "10": check_covertness,
}

_TRIAL_ARGS = {"2": "trials", "3": "samples", "6": "trials", "7a": "trials", "7b": "trials", "7e": "trials",
               "7f": "trials", "7g": "trials", "8": "samples", "8b": "samples", "10": "trials"}


def run_suite(trials=None, seed=0, only=None):
    """Run every check; ``trials`` caps the Monte Carlo sizes (None keeps the defaults)."""
    out = []
    for key, fn in CHECKS.items():
        if only is not None and key not in only:
            continue
        kw = {}
        if "seed" in fn.__code__.co_varnames:
            kw["seed"] = seed
        if trials is not None and key in _TRIAL_ARGS:
            kw[_TRIAL_ARGS[key]] = int(trials)
        out.append(fn(**kw))
    return out
