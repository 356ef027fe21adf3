"""Special functions behind the detector probabilities.

Everything here is built on a Lanczos log-gamma so the module has no
special-function dependency: regularized incomplete gamma and beta functions,
the inverse lower incomplete gamma, central/noncentral chi-squared CDFs, a
noncentral F CDF, the rising factorial and the terminating Gauss
hypergeometric series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ConvergenceError",
    "SeriesTolerance",
    "lgamma",
    "reg_lower_gamma",
    "reg_upper_gamma",
    "inv_reg_lower_gamma",
    "chi2_cdf",
    "chi2_sf",
    "noncentral_chi2_cdf",
    "reg_inc_beta",
    "noncentral_f_cdf",
    "pochhammer",
    "gauss_2f1_terminating",
]

_EPS = 2.220446049250313e-16
_TINY = 1e-300


class ConvergenceError(ArithmeticError):
    """A series or continued fraction did not converge within its term budget."""


@dataclass(frozen=True)
class SeriesTolerance:
    abs_tol: float = 1e-12
    max_terms: int = 10_000

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")


DEFAULT_TOL = SeriesTolerance()

# Lanczos coefficients for g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def lgamma(x: float) -> float:
    """log|Gamma(x)| by the Lanczos approximation (reflection below 1/2)."""
    if x < 0.5:
        s = math.sin(math.pi * x)
        if s == 0.0:
            raise ValueError("lgamma pole at non-positive integer")
        return math.log(math.pi / abs(s)) - lgamma(1.0 - x)
    x -= 1.0
    acc = _LANCZOS[0]
    for i in range(1, 9):
        acc += _LANCZOS[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(acc)


def _gamma_prefactor(a: float, x: float) -> float:
    # x^a e^-x / Gamma(a)
    return math.exp(a * math.log(x) - x - lgamma(a))


def _lower_series(a, x, tol):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(tol.max_terms):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * _gamma_prefactor(a, x)
    raise ConvergenceError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _upper_cf(a, x, tol):
    # modified Lentz on the Legendre continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, tol.max_terms + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * _gamma_prefactor(a, x)
    raise ConvergenceError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def reg_lower_gamma(a: float, x: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if not a > 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _lower_series(a, x, tol))
    return max(0.0, 1.0 - _upper_cf(a, x, tol))


def reg_upper_gamma(a: float, x: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), accurate in the tail."""
    if not a > 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x, tol))
    return min(1.0, _upper_cf(a, x, tol))


def inv_reg_lower_gamma(a: float, p: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Return x with P(a, x) = p.

    A bracket around the small-x asymptote is grown geometrically, then
    safeguarded Newton steps (bisection when a step leaves the bracket) run
    until the bracket or the step is at machine precision relative to x.
    Raises if ``|P(a, x) - p| > 1e-10`` at the end.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if p == 1.0:
        raise ValueError("unbounded quantile: p = 1 has no finite inverse")
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1)")
    if p == 0.0:
        return 0.0

    q = 1.0 - p

    def resid(x):
        # P(a, x) - p from whichever tail is small, so tiny and near-one p keep full precision
        pl = reg_lower_gamma(a, x, tol)
        return pl - p if pl < 0.5 else q - reg_upper_gamma(a, x, tol)

    lga = lgamma(a)
    # P(a, x) ~ x^a / Gamma(a + 1) for small x
    x = math.exp((math.log(p) + lgamma(a + 1.0)) / a) if p < 0.5 else max(a, 1.0)
    x = min(max(x, 1e-300), 1e300)
    lo, hi = x, x
    while resid(lo) > 0:
        hi, lo = lo, lo * 0.5
        if lo < 1e-300:
            return 0.0
    while resid(hi) < 0:
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise ConvergenceError("could not bracket the incomplete gamma quantile")

    x = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
    for _ in range(400):
        fx = resid(x)
        if fx == 0.0:
            return x
        if fx > 0:
            hi = x
        else:
            lo = x
        if hi - lo <= 4 * _EPS * hi:
            break
        dens = math.exp((a - 1.0) * math.log(x) - x - lga) if x > 0 else 0.0
        step = fx / dens if dens > 0 else math.inf
        cand = x - step
        if lo < cand < hi:
            if abs(step) <= 2 * _EPS * x:
                x = cand
                break
            x = cand
        else:
            x = math.sqrt(lo * hi) if lo > 0 and hi / lo > 4.0 else 0.5 * (lo + hi)
    if abs(reg_lower_gamma(a, x, tol) - p) > 1e-10:
        raise ConvergenceError(f"inverse incomplete gamma failed (a={a}, p={p})")
    return x


def chi2_cdf(m: float, x: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """CDF of the central chi-squared law with ``m`` degrees of freedom."""
    if m <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0:
        return 0.0
    return reg_lower_gamma(0.5 * m, 0.5 * x, tol)


def chi2_sf(m: float, x: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    if m <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0:
        return 1.0
    return reg_upper_gamma(0.5 * m, 0.5 * x, tol)


def _poisson_window(lam: float, tol: SeriesTolerance):
    """First index of the Poisson(lam) sum and the mass below it."""
    if lam < 50.0:
        return 0, 0.0
    start = int(max(0.0, math.floor(lam - 12.0 * math.sqrt(lam) - 10.0)))
    if start == 0:
        return 0, 0.0
    # P(Poisson(lam) <= start - 1) = Q(start, lam)
    return start, reg_upper_gamma(float(start), lam, tol)


def _poisson_mixture(lam, start_mass, start, component, tol):
    """sum_t Pois(t; lam) * component(t), component decreasing in t and in [0, 1].

    Truncated once the omitted Poisson mass (lower window plus upper tail)
    is below ``tol.abs_tol`` or the component itself has underflowed.
    """
    if lam == 0.0:
        return component(0)
    log_lam = math.log(lam)
    acc_w = 0.0
    total = 0.0
    t = start
    for _ in range(tol.max_terms):
        w = math.exp(-lam + t * log_lam - lgamma(t + 1.0))
        f = component(t)
        total += w * f
        acc_w += w
        remaining = 1.0 - start_mass - acc_w
        if remaining < tol.abs_tol or f < 1e-17:
            return total
        t += 1
    raise ConvergenceError(f"Poisson mixture did not converge (lam={lam})")


def noncentral_chi2_cdf(m: float, c: float, x: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """CDF of the noncentral chi-squared law with ``m`` dof and noncentrality ``c``."""
    if m <= 0:
        raise ValueError("degrees of freedom must be positive")
    if c < 0:
        raise ValueError("noncentrality must be nonnegative")
    if x <= 0:
        return 0.0
    if c == 0.0:
        return chi2_cdf(m, x, tol)
    lam = 0.5 * c
    start, low_mass = _poisson_window(lam, tol)
    val = _poisson_mixture(lam, low_mass, start, lambda t: chi2_cdf(m + 2 * t, x, tol), tol)
    return min(1.0, max(0.0, val))


def _lbeta(a, b):
    return lgamma(a) + lgamma(b) - lgamma(a + b)


def _beta_cf(a, b, x, tol):
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for mm in range(1, tol.max_terms + 1):
        m2 = 2 * mm
        aa = mm * (b - mm) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + mm) * (qab + mm) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ConvergenceError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def reg_inc_beta(a: float, b: float, x: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - _lbeta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return min(1.0, front * _beta_cf(a, b, x, tol) / a)
    return max(0.0, 1.0 - front * _beta_cf(b, a, 1.0 - x, tol) / b)


def noncentral_f_cdf(d1: float, d2: float, c: float, f: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """CDF of the noncentral F(d1, d2) law with noncentrality ``c``."""
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if c < 0:
        raise ValueError("noncentrality must be nonnegative")
    if f <= 0:
        return 0.0
    y = d1 * f / (d1 * f + d2)
    if c == 0.0:
        return reg_inc_beta(0.5 * d1, 0.5 * d2, y, tol)
    lam = 0.5 * c
    start, low_mass = _poisson_window(lam, tol)
    val = _poisson_mixture(
        lam, low_mass, start, lambda t: reg_inc_beta(0.5 * d1 + t, 0.5 * d2, y, tol), tol
    )
    return min(1.0, max(0.0, val))


def pochhammer(g: float, k: int) -> float:
    """Rising factorial (g)_k = g (g+1) ... (g+k-1); (g)_0 = 1."""
    if k < 0 or int(k) != k:
        raise ValueError("k must be a nonnegative integer")
    out = 1.0
    for i in range(int(k)):
        out *= g + i
    return out


def gauss_2f1_terminating(a: float, b: float, c: float, x: float) -> float:
    """2F1(a, b; c; x) for b in {0, -1, -2, ...}, summed exactly."""
    if b > 0 or int(b) != b:
        raise ValueError("b must be a nonpositive integer so the series terminates")
    n = int(-b)
    if c <= 0 and int(c) == c and c >= b:
        raise ValueError("c is a nonpositive integer inside the summation range")
    total = 1.0
    term = 1.0
    for l in range(n):
        term *= (a + l) * (b + l) / ((c + l) * (l + 1)) * x
        total += term
    return total
