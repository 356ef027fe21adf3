"""Benchmark harness: coupled-pendulum network, Monte Carlo sweeps, CSV output and the CLI."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .detect import (
    adaptive_pd,
    adaptive_pd_real,
    adaptive_threshold,
    detection_probability,
    glrt_statistic,
    mismatched_pfa,
    noncentrality,
    threshold_from_pfa,
)
from .noise_design import (
    SolverError,
    design_context,
    design_fa_constrained,
    design_weighted,
    fa_cap,
    total_mi,
)
from .sysmodel import ModelError, Network, SubsystemModel, build_plan, rollout, sinusoidal_ramp_attack
from .umv_filter import FilterDesignError, design_gains

__all__ = [
    "ConfigError",
    "PendulumParams",
    "Scenario",
    "ExperimentConfig",
    "ExperimentResult",
    "build_pendulum_benchmark",
    "build_scenario",
    "run_experiment",
    "emit_csv",
    "binomial_half_width",
    "main",
]

DEFAULT_TRIALS = 10_000
KINDS = ("known-cov-sweep", "fa-constrained-sweep", "adaptive-sweep", "validate")
Z95 = 1.959963984540054
Z99 = 2.5758293035489004


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 0.5
    length: float = 0.1
    spring_height: float = 0.06
    gravity: float = 9.81
    sample_time: float = 0.01
    springs: tuple = ((1, 2, 27.0), (2, 3, 40.0), (2, 4, 35.0), (3, 4, 53.0))
    noise: float = 0.001

    def spring(self, i, j):
        for a, b, k in self.springs:
            if {a, b} == {i, j}:
                return float(k)
        return None


def _spring_table(params: PendulumParams):
    table = {}
    for a, b, k in params.springs:
        for key in ((a, b), (b, a)):
            if key in table and table[key] != k:
                raise ConfigError(f"spring k_{a}{b} given twice with different values")
            table[key] = float(k)
    for (a, b), k in table.items():
        if table.get((b, a)) != k:
            raise ConfigError("spring coefficients must be symmetric")
    return table


def build_pendulum_benchmark(params: PendulumParams | None = None, controllers=None):
    """Four pendula coupled by springs, linearized and Euler-discretized.

    State [angle, rate]; A_c = [[0, 1], [g/l - sum_j k_ij eps^2/(m l^2), 0]],
    coupling [[0, 0], [k_ij eps^2/(m l^2), 0]], input [0; 1/(m l^2)].
    Returns (network, gains). Every node starts in filter steady state:
    sigma_x0 is replaced by the node's steady-state estimation error covariance.
    """
    p = params or PendulumParams()
    table = _spring_table(p)
    ids = sorted({a for a, _ in table})
    ml2 = p.mass * p.length ** 2
    eps2 = p.spring_height ** 2
    Ts = p.sample_time
    models = []
    for i in ids:
        nbrs = sorted(j for (a, j) in table if a == i)
        ksum = sum(table[(i, j)] for j in nbrs)
        Ac = np.array([[0.0, 1.0], [p.gravity / p.length - ksum * eps2 / ml2, 0.0]])
        coup = [(j, Ts * np.array([[0.0, 0.0], [table[(i, j)] * eps2 / ml2, 0.0]])) for j in nbrs]
        models.append(SubsystemModel(
            id=i, A=np.eye(2) + Ts * Ac, B=Ts * np.array([[0.0], [1.0 / ml2]]), C=np.eye(2),
            neighbors=coup, sigma_w=p.noise * np.eye(2), sigma_v=p.noise * np.eye(2), sigma_x0=np.eye(2)))
    net = Network(models, controllers)
    return steady_state_start(net)


def steady_state_start(net: Network):
    """Design every node's filter and restart the network in filter steady state."""
    gains = {mdl.id: design_gains(mdl, net.decomposition(mdl.id)) for mdl in net}
    net = Network([mdl.replace(sigma_x0=gains[mdl.id].sigma_e_ss) for mdl in net], net.controllers)
    return net, gains


@dataclass
class Scenario:
    network: Network
    gains: dict
    sample_time: float
    attack: object
    receiver: int

    def context(self, K):
        return design_context(self.network, self.gains, self.receiver, K)

    def plan(self, schedule=None, attacked=True):
        scheds = {self.receiver: schedule} if schedule is not None else None
        atks = [self.attack] if (attacked and self.attack is not None) else []
        return build_plan(self.network, self.gains, scheds, atks)

    def neighbor_attack_states(self, k):
        """Attacker states of the receiver's neighbors at step k, in neighbor order."""
        out = []
        for j in self.network[self.receiver].neighbor_ids:
            n = self.network[j].n
            if self.attack is not None and self.attack.target == j:
                out.append(self.attack.attacker_states(self.network[j], k)[k])
            else:
                out.append(np.zeros(n))
        return out


def build_scenario(cfg: "ExperimentConfig") -> Scenario:
    if cfg.network == "pendulum4":
        net, gains = build_pendulum_benchmark(PendulumParams(sample_time=cfg.sample_time))
    else:
        try:
            net, gains = steady_state_start(Network.from_dict(cfg.network))
        except (ModelError, FilterDesignError) as exc:
            raise ConfigError(f"network: {exc}") from exc
    atk = None
    if cfg.attack is not None:
        a = dict(cfg.attack)
        target = int(a.pop("target", 3))
        if target not in net.ids:
            raise ConfigError(f"attack target {target} is not a node")
        try:
            atk = sinusoidal_ramp_attack(target, sample_time=cfg.sample_time, **a)
        except TypeError as exc:
            raise ConfigError(f"bad attack spec: {exc}") from exc
    if cfg.receiver not in net.ids:
        raise ConfigError(f"receiver {cfg.receiver} is not a node")
    return Scenario(net, gains, cfg.sample_time, atk, cfg.receiver)


@dataclass
class ExperimentConfig:
    kind: str
    grid: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    network: object = "pendulum4"
    horizon: int = 5
    sample_time: float = 0.01
    attack: dict | None = field(default_factory=lambda: {"target": 3, "start_time": 1.0})
    receiver: int = 2
    p_f: float = 0.25
    K_star: int = 24
    adaptive_tau: float | None = None
    detect_delay: float = 0.5
    trials: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)}")
        if self.trials is None and self.kind != "validate":
            self.trials = DEFAULT_TRIALS
        if self.trials is not None:
            if int(self.trials) != self.trials or self.trials < 1:
                raise ConfigError("trials must be a positive integer")
            self.trials = int(self.trials)
        if self.kind != "validate" and not self.grid:
            raise ConfigError("grid must be nonempty")
        if not 0.0 < self.p_f < 1.0:
            raise ConfigError("p_f must lie in (0, 1)")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        if self.sample_time <= 0:
            raise ConfigError("sample_time must be positive")
        if self.detect_delay < 0:
            raise ConfigError("detect_delay must be nonnegative")
        self.grid = [float(g) for g in self.grid]
        if self.kind in ("known-cov-sweep", "adaptive-sweep") and any(g <= 0 for g in self.grid):
            raise ConfigError("kappa values must be positive")
        if self.kind == "fa-constrained-sweep" and any(g <= 0 or self.p_f + g >= 1 for g in self.grid):
            raise ConfigError("nu values must satisfy 0 < nu < 1 - p_f")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        if "kind" not in doc:
            raise ConfigError("config needs a 'kind'")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.from_dict(doc)

    def detect_step(self, scenario: Scenario):
        if scenario.attack is None:
            return max(1, int(round(self.detect_delay / self.sample_time)))
        return scenario.attack.k_start + int(round(self.detect_delay / self.sample_time))


COLUMNS = ("sweep_value", "mi", "analytic", "empirical", "half_width", "threshold", "margin",
           "analytic_alt", "trials", "discrepancy")


@dataclass
class ExperimentResult:
    kind: str
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    schedules: list = field(default_factory=list)

    @property
    def ok(self):
        return not any(r.get("discrepancy") for r in self.rows) and all(c.ok for c in self.checks)


def binomial_half_width(p_hat, n, z=Z95):
    return z * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)


def agrees(p_analytic, p_emp, n, z=Z99):
    """Empirical rate inside the z-sigma band around the analytic probability (continuity-corrected)."""
    sigma = math.sqrt(max(p_analytic * (1.0 - p_analytic), 0.0) / n)
    return abs(p_emp - p_analytic) <= z * sigma + 0.5 / n


def _receiver_z(scn: Scenario, plan, trials, step, seed):
    sl = plan.yslices[scn.receiver]
    out = rollout(plan, trials, step, [step], seed=seed, keep={"z": sl})
    return out["z"][:, 0]


def secondary_residuals(scn: Scenario, schedule, trials, K_star, seed):
    """K* independent attack-free residuals per trial, shape (trials, K*, m)."""
    plan = scn.plan(schedule, attacked=False)
    sl = plan.yslices[scn.receiver]
    z = rollout(plan, trials * K_star, 1, [1], seed=seed, keep={"z": sl})["z"][:, 0]
    return z.reshape(trials, K_star, -1)


def _known_cov_row(cfg, scn, ctx, kappa, idx):
    sched, rep = design_weighted(ctx, kappa)
    res = ctx.residual.with_schedule(sched.blocks)
    k = cfg.detect_step(scn)
    tau = threshold_from_pfa(res.m, cfg.p_f)
    c = noncentrality(res, scn.neighbor_attack_states(k - 1))
    pd = detection_probability(res.m, tau, c)
    z = _receiver_z(scn, scn.plan(sched), cfg.trials, k, cfg.seed * 1000 + idx)
    emp = float(np.mean(glrt_statistic(z, res.sigma_zp) > tau))
    return sched, dict(sweep_value=kappa, mi=total_mi(ctx, sched), analytic=pd, empirical=emp,
                       half_width=binomial_half_width(emp, cfg.trials), threshold=tau,
                       margin=min(rep.feasibility_margins.values()), analytic_alt=c, trials=cfg.trials,
                       discrepancy=int(not agrees(pd, emp, cfg.trials)))


def _fa_row(cfg, scn, ctx, nu, idx):
    sched, rep = design_fa_constrained(ctx, cfg.p_f, nu)
    res = ctx.residual.with_schedule(sched.blocks)
    tau = threshold_from_pfa(res.m, cfg.p_f)
    k = cfg.detect_step(scn)
    z = _receiver_z(scn, scn.plan(sched, attacked=False), cfg.trials, k, cfg.seed * 1000 + idx)
    emp = float(np.mean(glrt_statistic(z, res.sigma_z) > tau))
    pf = mismatched_pfa(res, tau)
    return sched, dict(sweep_value=nu, mi=total_mi(ctx, sched), analytic=pf, empirical=emp,
                       half_width=binomial_half_width(emp, cfg.trials), threshold=tau,
                       margin=rep.feasibility_margins["fa_constraint"], analytic_alt=cfg.p_f + nu,
                       trials=cfg.trials,
                       discrepancy=int(not agrees(pf, emp, cfg.trials) or pf > cfg.p_f + nu))


def _adaptive_row(cfg, scn, ctx, kappa, idx):
    sched, rep = design_weighted(ctx, kappa)
    res = ctx.residual.with_schedule(sched.blocks)
    m = res.m
    tau_s = cfg.adaptive_tau if cfg.adaptive_tau is not None else adaptive_threshold(m, cfg.K_star, cfg.p_f)
    k = cfg.detect_step(scn)
    c = noncentrality(res, scn.neighbor_attack_states(k - 1))
    z = _receiver_z(scn, scn.plan(sched), cfg.trials, k, cfg.seed * 1000 + idx)
    sec = secondary_residuals(scn, sched, cfg.trials, cfg.K_star, cfg.seed * 1000 + 500 + idx)
    S = np.einsum("tki,tkj->tij", sec, sec)
    t = np.einsum("ti,ti->t", z, np.linalg.solve(S, z[..., None])[..., 0])
    emp = float(np.mean(t > tau_s - 1.0))
    exact = adaptive_pd_real(m, cfg.K_star, tau_s, c)
    return sched, dict(sweep_value=kappa, mi=total_mi(ctx, sched), analytic=exact, empirical=emp,
                       half_width=binomial_half_width(emp, cfg.trials), threshold=tau_s,
                       margin=min(rep.feasibility_margins.values()),
                       analytic_alt=adaptive_pd(m, cfg.K_star, tau_s, c), trials=cfg.trials,
                       discrepancy=int(not agrees(exact, emp, cfg.trials)))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one sweep (or the validation suite) and collect the result rows.

    Rows: known-cov-sweep reports the analytic detection probability of the
    matched detector (``analytic_alt`` holds the noncentrality);
    fa-constrained-sweep the exact false-alarm rate of the mismatched
    detector (``analytic_alt`` holds the cap p_f + nu); adaptive-sweep the
    exact real-data detection probability (``analytic_alt`` holds the
    complex-data closed form).
    """
    if cfg.kind == "validate":
        from .validation import run_suite

        checks = run_suite(trials=cfg.trials, seed=cfg.seed)
        return ExperimentResult(kind=cfg.kind, checks=checks)
    scn = build_scenario(cfg)
    if cfg.kind != "fa-constrained-sweep" and scn.attack is None:
        raise ConfigError("detection sweeps need an attack")
    ctx = scn.context(cfg.horizon)
    fn = {"known-cov-sweep": _known_cov_row, "fa-constrained-sweep": _fa_row, "adaptive-sweep": _adaptive_row}[cfg.kind]
    result = ExperimentResult(kind=cfg.kind)
    for idx, g in enumerate(cfg.grid):
        try:
            sched, row = fn(cfg, scn, ctx, g, idx)
        except SolverError as exc:
            raise SolverError(f"sweep point {g:g}: {exc}", exc.schedule, exc.report) from exc
        result.rows.append(row)
        result.schedules.append(sched)
    return result


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


def emit_csv(result: ExperimentResult, path=None) -> str:
    """Write the result table as UTF-8 CSV with 9 significant digits; returns the text."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    if result.kind == "validate":
        wr.writerow(("check", "status", "value", "tolerance", "detail"))
        for c in result.checks:
            wr.writerow((c.name, c.status, _fmt(c.value), _fmt(c.tolerance), c.detail))
    else:
        wr.writerow(COLUMNS)
        for row in result.rows:
            wr.writerow([_fmt(row[k]) for k in COLUMNS])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _load_config(args, kind=None):
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
        doc = {k: getattr(cfg, k) for k in ExperimentConfig.__dataclass_fields__}
    else:
        if kind is None:
            raise ConfigError("--config is required")
        doc = {"kind": kind}
    if kind is not None:
        doc["kind"] = kind
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.trials is not None:
        doc["trials"] = args.trials
    return ExperimentConfig.from_dict(doc)


def _cmd_run(args):
    cfg = _load_config(args)
    res = run_experiment(cfg)
    text = emit_csv(res, args.out)
    if args.out is None:
        sys.stdout.write(text)
    for row in res.rows:
        if row["discrepancy"]:
            print(f"discrepancy at sweep value {row['sweep_value']:g}: analytic {row['analytic']:.6g}, "
                  f"empirical {row['empirical']:.6g}", file=sys.stderr)
    return 0 if res.ok else 1


def _cmd_validate(args):
    cfg = _load_config(args, kind="validate")
    res = run_experiment(cfg)
    text = emit_csv(res, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0 if res.ok else 1


def _cmd_design(args):
    cfg = _load_config(args)
    scn = build_scenario(cfg)
    ctx = scn.context(cfg.horizon)
    out = []
    for g in cfg.grid:
        if cfg.kind == "fa-constrained-sweep":
            sched, rep = design_fa_constrained(ctx, cfg.p_f, g)
            extra = {"nu": g, "cap": fa_cap(ctx.m, cfg.p_f, g)}
        else:
            sched, rep = design_weighted(ctx, g)
            extra = {"kappa": g}
        out.append(extra | {"receiver": scn.receiver, "mi": total_mi(ctx, sched),
                            "schedule": sched.to_dict(), "report": rep.to_dict()})
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="privdetect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a sweep and write CSV"),
                           ("validate", "run the invariant suite"),
                           ("design", "solve the design problem for each grid point and print the schedules")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="experiment JSON file")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--trials", type=int, help="override the Monte Carlo trial count")
    args = parser.parse_args(argv)
    try:
        return {"run": _cmd_run, "validate": _cmd_validate, "design": _cmd_design}[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
