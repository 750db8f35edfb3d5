"""q-Pochhammer symbols and the Heine / discrete normal laws.

Everything that can underflow is evaluated in log space. The infinite
products are truncated once the remaining tail is provably below the
requested tolerance, so the number of factors is known before the sum is
formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence

__all__ = [
    "HeineParams",
    "DNormParams",
    "SeriesTolerance",
    "DEFAULT_TOL",
    "qpoch_finite",
    "qpoch_inf",
    "log_qpoch_inf",
    "heine_pmf",
    "heine_logpmf",
    "heine_cgf",
    "heine_mean",
    "heine_variance",
    "dnorm_pmf",
    "dnorm_logpmf",
    "dnorm_log_normalizer",
    "dnorm_from_heine",
]


def _check_q(q: float) -> None:
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must lie in (0, 1), got {q!r}")


@dataclass(frozen=True)
class HeineParams:
    """Parameters (theta, q) of a Heine law on the nonnegative integers."""

    theta: float
    q: float

    def __post_init__(self) -> None:
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be positive and finite, got {self.theta!r}")
        _check_q(self.q)


@dataclass(frozen=True)
class DNormParams:
    """Parameters (theta, q) of a discrete normal law on the integers."""

    theta: float
    q: float

    def __post_init__(self) -> None:
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be positive and finite, got {self.theta!r}")
        _check_q(self.q)


@dataclass(frozen=True)
class SeriesTolerance:
    """Absolute truncation tolerance and term cap for infinite series."""

    eps: float = 1e-14
    max_terms: int = 10_000

    def __post_init__(self) -> None:
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


DEFAULT_TOL = SeriesTolerance()


def _terms_needed(scale: float, q: float, tol: SeriesTolerance) -> int:
    """Number of geometric terms scale*q**i before the tail drops under eps/10.

    The tail beyond index N is bounded by scale*q**N/(1-q); we stop once that
    bound falls below eps/10, which also makes every later log-factor smaller
    than eps/10.
    """
    if scale == 0.0:
        return 0
    target = tol.eps * (1.0 - q) / 10.0
    if scale <= target:
        return 1
    count = int(math.ceil(math.log(target / scale) / math.log(q))) + 1
    if count > tol.max_terms:
        raise NonConvergence(
            f"series needs {count} terms, more than max_terms={tol.max_terms}"
        )
    return count


def qpoch_finite(z: float, q: float, j: int) -> float:
    """Finite product prod_{i<j} (1 - z q^i); equals 1 for j = 0."""
    _check_q(q)
    if j < 0:
        raise ValueError("j must be nonnegative")
    out = 1.0
    zi = z
    for _ in range(j):
        out *= 1.0 - zi
        zi *= q
    return out


def _log_abs_qpoch_inf(z: float, q: float, tol: SeriesTolerance) -> tuple[float, float]:
    """Return (sign, log|.|) of (z; q)_inf."""
    _check_q(q)
    if not math.isfinite(z):
        raise ValueError("z must be finite")
    count = _terms_needed(abs(z), q, tol)
    if count == 0:
        return 1.0, 0.0
    terms = z * q ** np.arange(count, dtype=float)
    factors = 1.0 - terms
    if np.any(factors == 0.0):
        return 0.0, -math.inf
    sign = -1.0 if int(np.count_nonzero(factors < 0.0)) % 2 else 1.0
    with np.errstate(invalid="ignore"):
        logs = np.where(terms < 1.0, np.log1p(-np.minimum(terms, 0.5)), 0.0)
    logs = np.where(np.abs(terms) < 0.5, logs, np.log(np.abs(factors)))
    return sign, math.fsum(logs.tolist())


def qpoch_inf(z: float, q: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Infinite q-Pochhammer symbol (z; q)_inf, truncated by ``tol``."""
    sign, logabs = _log_abs_qpoch_inf(z, q, tol)
    return sign * math.exp(logabs) if sign != 0.0 else 0.0


def log_qpoch_inf(z: float, q: float, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """log (z; q)_inf for z < 1, where every factor is positive."""
    if z >= 1.0:
        raise ValueError("log_qpoch_inf needs z < 1 so that all factors are positive")
    return _log_abs_qpoch_inf(z, q, tol)[1]


def _log_qq_finite(q: float, jmax: int) -> np.ndarray:
    """Array L with L[j] = log (q; q)_j for j = 0..jmax."""
    out = np.zeros(jmax + 1)
    if jmax > 0:
        out[1:] = np.cumsum(np.log1p(-(q ** np.arange(1, jmax + 1, dtype=float))))
    return out


def heine_logpmf(j: int | np.ndarray, p: HeineParams, tol: SeriesTolerance = DEFAULT_TOL) -> np.ndarray | float:
    """Log of the Heine pmf, vectorised over nonnegative integers ``j``."""
    js = np.asarray(j)
    if np.any(js < 0):
        raise ValueError("Heine support is the nonnegative integers")
    jmax = int(js.max()) if js.size else 0
    lqq = _log_qq_finite(p.q, jmax)
    log_norm = log_qpoch_inf(-p.theta, p.q, tol)
    jf = js.astype(float)
    out = 0.5 * jf * (jf - 1.0) * math.log(p.q) + jf * math.log(p.theta) - lqq[js] - log_norm
    return float(out) if np.ndim(j) == 0 else out


def heine_pmf(j: int | np.ndarray, p: HeineParams, tol: SeriesTolerance = DEFAULT_TOL) -> np.ndarray | float:
    """Heine probability q^{j(j-1)/2} theta^j / ((q;q)_j (-theta;q)_inf)."""
    return np.exp(heine_logpmf(j, p, tol))


def heine_cgf(s: float, p: HeineParams, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Cumulant generating function log E[e^{sX}] of a Heine variable."""
    if not math.isfinite(s):
        raise ValueError("s must be finite")
    if s == 0.0:
        return 0.0
    return log_qpoch_inf(-p.theta * math.exp(s), p.q, tol) - log_qpoch_inf(-p.theta, p.q, tol)


def heine_mean(p: HeineParams, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Mean sum_j theta q^j / (1 + theta q^j)."""
    count = _terms_needed(p.theta, p.q, tol)
    t = p.theta * p.q ** np.arange(count, dtype=float)
    return math.fsum((t / (1.0 + t)).tolist())


def heine_variance(p: HeineParams, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """Variance sum_j theta q^j / (1 + theta q^j)^2 (a sum of Bernoulli variances)."""
    count = _terms_needed(p.theta, p.q, tol)
    t = p.theta * p.q ** np.arange(count, dtype=float)
    return math.fsum((t / (1.0 + t) ** 2).tolist())


def _dnorm_logweight(j: np.ndarray | float, p: DNormParams) -> np.ndarray | float:
    jf = np.asarray(j, dtype=float)
    return jf * math.log(p.theta) + 0.5 * jf * (jf - 1.0) * math.log(p.q)


def dnorm_log_normalizer(p: DNormParams, tol: SeriesTolerance = DEFAULT_TOL) -> float:
    """log Z for the discrete normal law, summed outward from the mode."""
    log_q = math.log(p.q)
    centre = 0.5 - math.log(p.theta) / log_q
    lo, hi = math.floor(centre), math.ceil(centre)
    mode = lo if _dnorm_logweight(lo, p) >= _dnorm_logweight(hi, p) else hi
    peak = float(_dnorm_logweight(mode, p))
    cutoff = math.log(tol.eps) - 5.0
    terms = [1.0]
    for direction in (1, -1):
        k = mode + direction
        steps = 0
        while True:
            rel = float(_dnorm_logweight(k, p)) - peak
            if rel < cutoff:
                break
            terms.append(math.exp(rel))
            k += direction
            steps += 1
            if steps > tol.max_terms:
                raise NonConvergence("discrete normal normaliser did not converge")
    return peak + math.log(math.fsum(terms))


def dnorm_logpmf(j: int | np.ndarray, p: DNormParams, tol: SeriesTolerance = DEFAULT_TOL) -> np.ndarray | float:
    """Log probability of the discrete normal law, vectorised over integers."""
    out = _dnorm_logweight(j, p) - dnorm_log_normalizer(p, tol)
    return float(out) if np.ndim(j) == 0 else out


def dnorm_pmf(j: int | np.ndarray, p: DNormParams, tol: SeriesTolerance = DEFAULT_TOL) -> np.ndarray | float:
    """Discrete normal probability theta^j q^{j(j-1)/2} / Z."""
    return np.exp(dnorm_logpmf(j, p, tol))


def dnorm_from_heine(plus: HeineParams) -> DNormParams:
    """Law of X+ - X- when X+ ~ He(theta, q), X- ~ He(q/theta, q) are independent."""
    return DNormParams(theta=plus.theta, q=plus.q)
