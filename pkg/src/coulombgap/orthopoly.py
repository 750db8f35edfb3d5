"""Norms of weighted orthogonal polynomials and their bifurcation asymptotics.

For a radial weight the monic orthogonal polynomials are the monomials, so
the squared norm of degree j is the moment h_j = 2 int r^{2j+1} e^{-nQ(r)+s omega(r)} dr
(normalised area). Two independent evaluators are provided: an adaptive
QUADPACK integration per index and a vectorised composite Gauss-Legendre
rule over all indices at once. Every quantity is carried as a logarithm.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from . import kernels
from .errors import QuadratureFailure, RegimeError
from .potential import (
    GapGeometry,
    Obstacle,
    RadialPotential,
    floor_count,
    frac_part,
    laplacian_radial,
)
from .qdist import HeineParams, heine_cgf

# --------------------------------------------------------------------------
# Perturbation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothStep:
    """Quintic smoothstep: 0 for r <= m1, 1 for r >= m2, C^2 in between."""

    m1: float
    m2: float

    def __post_init__(self) -> None:
        if not self.m1 < self.m2:
            raise ValueError("need m1 < m2")

    def _t(self, r):
        return np.clip((np.asarray(r, dtype=float) - self.m1) / (self.m2 - self.m1), 0.0, 1.0)

    def __call__(self, r):
        t = self._t(r)
        return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)

    def d1(self, r):
        t = self._t(r)
        return 30.0 * t * t * (1.0 - t) ** 2 / (self.m2 - self.m1)

    def d2(self, r):
        t = self._t(r)
        return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (self.m2 - self.m1) ** 2

    @property
    def threshold(self) -> float:
        """Log-midpoint of [m1, m2], the default count threshold."""
        if self.m1 <= 0.0:
            return 0.5 * (self.m1 + self.m2)
        return math.sqrt(self.m1 * self.m2)

    def constant_on(self, pot: RadialPotential) -> bool:
        """True when the step takes only the values 0 and 1 on every window."""
        return all(p.hi <= self.m1 or p.lo >= self.m2 for p in pot.pieces)


def default_step(pot: RadialPotential) -> SmoothStep:
    """Step filling the hole between the first and second windows."""
    if len(pot.pieces) < 2:
        raise ValueError("default step needs at least two windows")
    return SmoothStep(pot.pieces[0].hi, pot.pieces[1].lo)


@dataclass(frozen=True)
class PerturbedWeight:
    """Radial weight e^{-n Q + s omega}."""

    pot: RadialPotential
    s: float = 0.0
    omega: SmoothStep | None = None

    def __post_init__(self) -> None:
        if self.omega is None and len(self.pot.pieces) >= 2:
            object.__setattr__(self, "omega", default_step(self.pot))

    def omega_values(self, r):
        if self.omega is None:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.omega(r)

    def with_s(self, s: float) -> "PerturbedWeight":
        return PerturbedWeight(self.pot, s, self.omega)

    def log_density(self, j: int, n: int, r):
        """(2j+1) log r - n Q(r) + s omega(r), -inf outside the windows."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return (2 * j + 1) * np.log(r) - n * self.pot.value(r) + self.s * self.omega_values(r)


# --------------------------------------------------------------------------
# Exact norms
# --------------------------------------------------------------------------


def bifurcation_halfwidth(n: int) -> int:
    """ceil(log(n)^2), the half-width of the bifurcation window."""
    return int(math.ceil(math.log(n) ** 2))


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    if m not in _GL_CACHE:
        _GL_CACHE[m] = np.polynomial.legendre.leggauss(m)
    return _GL_CACHE[m]


def panel_nodes(lo: float, hi: float, panels: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a composite Gauss-Legendre rule on [lo, hi]."""
    x, wts = _gauss_legendre(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * wts[None, :]).ravel()
    return nodes, weights


def _panels_for(width: float, n: int, refine: float) -> int:
    return int(math.ceil(refine * (width * math.sqrt(n) * 8.0 + 16.0)))


def window_nodes(pot: RadialPotential, n: int, refine: float = 1.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Composite Gauss-Legendre nodes per window, resolving peaks of width ~ n^{-1/2}."""
    return [panel_nodes(p.lo, p.hi, _panels_for(p.hi - p.lo, n, refine)) for p in pot.pieces]


def window_log_norms(w: PerturbedWeight, n: int, count: int | None = None, refine: float = 1.0) -> np.ndarray:
    """Matrix L[k, j] = log of the window-k contribution to h_j, j = 0..count-1.

    Uses the composite Gauss-Legendre rule and the compiled log-moment kernel.
    """
    count = n if count is None else count
    out = np.empty((len(w.pot.pieces), count))
    for k, (r, wt) in enumerate(window_nodes(w.pot, n, refine)):
        logw = np.log(2.0 * wt) - n * w.pot.pieces[k].profile.value(r) + w.s * w.omega_values(r)
        out[k] = kernels.log_moments(np.ascontiguousarray(logw), np.ascontiguousarray(np.log(r)), 0, count)
    return out


def log_norms(w: PerturbedWeight, n: int, count: int | None = None, refine: float = 1.0) -> np.ndarray:
    """log h_j for j = 0..count-1 (default count = n) by composite Gauss-Legendre."""
    return logsumexp(window_log_norms(w, n, count, refine), axis=0)


def _peak(w: PerturbedWeight, k: int, j: int, n: int) -> tuple[float, float]:
    """Location and value of the maximum of the log-integrand on window k."""
    piece = w.pot.pieces[k]
    lo = max(piece.lo, 1e-300)
    rs = np.linspace(lo, piece.hi, 4097)
    g = w.log_density(j, n, rs)
    i = int(np.argmax(g))
    a, b = rs[max(i - 1, 0)], rs[min(i + 1, rs.size - 1)]
    if b > a:
        res = optimize.minimize_scalar(lambda r: -float(w.log_density(j, n, r)), bounds=(a, b), method="bounded", options={"xatol": 1e-13})
        if -res.fun >= g[i]:
            return float(res.x), float(-res.fun)
    return float(rs[i]), float(g[i])


def log_norm_exact(w: PerturbedWeight, j: int, n: int, rtol: float = 1e-12) -> float:
    """log h_j by adaptive Gauss-Kronrod quadrature of exp(g - max g) per window."""
    if j < 0 or n < 1:
        raise ValueError("need j >= 0 and n >= 1")
    parts = []
    for k, piece in enumerate(w.pot.pieces):
        r_peak, g_peak = _peak(w, k, j, n)
        if not math.isfinite(g_peak):
            continue
        curv = (2 * j + 1) / r_peak**2 + n * float(piece.profile.d2(r_peak)) if r_peak > 0 else n
        sigma = 1.0 / math.sqrt(max(curv, 1e-300))
        cuts = sorted({piece.lo, piece.hi, *[min(max(r_peak + m * sigma, piece.lo), piece.hi) for m in (-40, -10, -3, 0, 3, 10, 40)]})

        def integrand(r, g_peak=g_peak):
            return math.exp(float(w.log_density(j, n, r)) - g_peak) if r > 0 else 0.0

        total, err_total = 0.0, 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b <= a:
                continue
            val, err = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=400)
            total += val
            err_total += err
        if total <= 0.0:
            continue
        if err_total > 1e-10 * total:
            raise QuadratureFailure(f"quadrature error {err_total / total:.2e} on window {k} for j={j}")
        parts.append(g_peak + math.log(2.0 * total))
    if not parts:
        raise QuadratureFailure("integrand vanishes on every window")
    return float(logsumexp(parts))


# --------------------------------------------------------------------------
# Asymptotics
# --------------------------------------------------------------------------


KAPPA_CANDIDATES = {"tau/2": lambda tau: tau / 2.0, "1/(2tau)": lambda tau: 1.0 / (2.0 * tau)}


@dataclass(frozen=True)
class QuasiPolyData:
    """Constants entering the quasi-polynomials and the two-peak norm formula.

    ``q1_inf``/``q2_inf`` are the values at infinity of the holomorphic
    functions whose real parts equal Q on the inner/outer curve, and
    ``h1_inf``/``h2_inf`` those of the functions with real part
    (1/2) log Delta Q there.
    """

    geometry: GapGeometry
    q1_inf: float
    q2_inf: float
    h1_inf: float
    h2_inf: float
    context: object | None = None

    @property
    def r1(self) -> float:
        return self.geometry.r1

    @property
    def r2(self) -> float:
        return self.geometry.r2

    @property
    def tau_star(self) -> float:
        return self.geometry.tau_star

    @classmethod
    def from_radial(cls, pot: RadialPotential, geometry: GapGeometry) -> "QuasiPolyData":
        return cls(
            geometry=geometry,
            q1_inf=float(pot.value(geometry.r1)),
            q2_inf=float(pot.value(geometry.r2)),
            h1_inf=0.5 * math.log(float(laplacian_radial(pot, geometry.r1))),
            h2_inf=0.5 * math.log(float(laplacian_radial(pot, geometry.r2))),
        )

    def lura_residual(self, kappa: float) -> float:
        """log(r2/r1) - kappa (q2_inf - q1_inf): zero for the right normalisation."""
        return math.log(self.r2 / self.r1) - kappa * (self.q2_inf - self.q1_inf)

    def peak_exponents(self, j: int, n: int, kappa: float | None = None) -> tuple[float, float]:
        """(A0, A1) with A_k = (2j+1) log r_k - n q_k(inf) - h_k(inf).

        With ``kappa`` given, q2(inf) is not taken from the data but derived
        from q1(inf) through log(r2/r1) = kappa (q2 - q1).
        """
        q2 = self.q2_inf if kappa is None else self.q1_inf + math.log(self.r2 / self.r1) / kappa
        a0 = (2 * j + 1) * math.log(self.r1) - n * self.q1_inf - self.h1_inf
        a1 = (2 * j + 1) * math.log(self.r2) - n * q2 - self.h2_inf
        return a0, a1


def in_bifurcation_window(j: int, n: int, tau_star: float, margin: int = 0) -> bool:
    return abs(j - n * tau_star) <= bifurcation_halfwidth(n) + margin


def log_norm_asymptotic(g: QuasiPolyData, j: int, n: int, s: float = 0.0, kappa: float | None = None, margin: int = 0) -> float:
    """Two-peak Laplace approximation log[sqrt(2 pi/n)(e^{A0} + e^{A1+s})]."""
    if not in_bifurcation_window(j, n, g.tau_star, margin):
        raise RegimeError(f"j={j} is outside the bifurcation window around n*tau*={n * g.tau_star}")
    a0, a1 = g.peak_exponents(j, n, kappa)
    return 0.5 * math.log(2.0 * math.pi / n) + float(np.logaddexp(a0, a1 + s))


@dataclass(frozen=True)
class KappaResolution:
    """Outcome of testing the candidate normalisations against quadrature."""

    kappa: float
    label: str
    max_errors: dict[str, float]
    lura_residuals: dict[str, float]


def resolve_kappa(w: PerturbedWeight, g: QuasiPolyData, n: int) -> KappaResolution:
    """Pick the q-normalisation whose two-peak formula matches exact norms.

    Each candidate kappa is used to derive q2(inf) from q1(inf); the
    candidate with the smallest maximal error over the bifurcation window
    wins. The lura residual of each candidate is recorded as well.
    """
    exact = log_norms(w.with_s(0.0), n, count=n + bifurcation_halfwidth(n) + 1)
    errors, residuals = {}, {}
    for label, fn in KAPPA_CANDIDATES.items():
        kappa = fn(g.tau_star)
        js = [j for j in range(exact.size) if in_bifurcation_window(j, n, g.tau_star)]
        errors[label] = max(abs(exact[j] - log_norm_asymptotic(g, j, n, 0.0, kappa)) for j in js)
        residuals[label] = abs(g.lura_residual(kappa))
    best = min(errors, key=errors.get)
    return KappaResolution(KAPPA_CANDIDATES[best](g.tau_star), best, errors, residuals)


# --------------------------------------------------------------------------
# Cumulant generating functions of the outer count
# --------------------------------------------------------------------------


def cgf_count_predicted(g: QuasiPolyData, n: int, s: float, tau_star: float | None = None) -> float:
    """Limit CGF of the centred number of particles beyond the gap.

    Outpost: the Heine CGF with theta = (r1/r2) e^{-c}, q = (r1/r2)^2.
    Gap: the sum of the CGFs of X+ and -X- plus the deterministic drift
    s x_n, because exactly n - floor(n tau*) = n(1 - tau*) + x_n indices
    have their mass beyond the gap while the centring subtracts n(1 - tau*).
    """
    tau_star = g.tau_star if tau_star is None else tau_star
    if s == 0.0:
        return 0.0
    geom = g.geometry
    plus, minus = geom.heine_pair(n)
    if abs(tau_star - 1.0) <= 1e-12:
        return heine_cgf(s, plus)
    x = frac_part(n, tau_star)
    return heine_cgf(s, plus) + heine_cgf(-s, minus) + s * x


def _require_window_step(w: PerturbedWeight) -> None:
    if w.omega is None or not w.omega.constant_on(w.pot):
        raise ValueError("the count CGF needs a step that is constant on every window")


def count_log_ratios(w: PerturbedWeight, n: int, s_values: Sequence[float], refine: float = 1.0) -> np.ndarray:
    """Array R[i, j] = log(h_j(s_i)/h_j(0)) for all j < n.

    With the step equal to 0 or 1 on each window, h_j(s) = H_in + e^s H_out
    exactly, so the ratio is log1p-accurate.
    """
    _require_window_step(w)
    lw = window_log_norms(w.with_s(0.0), n, refine=refine)
    outer = np.array([w.omega((p.lo + p.hi) / 2) >= 0.5 for p in w.pot.pieces])
    l_in = logsumexp(lw[~outer], axis=0) if np.any(~outer) else np.full(n, -np.inf)
    l_out = logsumexp(lw[outer], axis=0) if np.any(outer) else np.full(n, -np.inf)
    d = l_out - l_in
    s_arr = np.asarray(s_values, dtype=float)
    return np.logaddexp(0.0, d[None, :] + s_arr[:, None]) - np.logaddexp(0.0, d)[None, :]


def cgf_count_exact(w: PerturbedWeight, n: int, s: float, tau_star: float) -> float:
    """Exact CGF of the centred outer count, summing log-norm ratios over all j < n."""
    ratios = count_log_ratios(w, n, [s])[0]
    return math.fsum(ratios.tolist()) - n * s * (1.0 - tau_star)


def cgf_count_exact_curve(w: PerturbedWeight, n: int, s_values: Sequence[float], tau_star: float) -> np.ndarray:
    ratios = count_log_ratios(w, n, s_values)
    return np.array([math.fsum(row.tolist()) - n * s * (1.0 - tau_star) for s, row in zip(s_values, ratios)])


def outer_probabilities(w: PerturbedWeight, n: int) -> np.ndarray:
    """P(R_j lies beyond the gap) for every index j < n."""
    ratios_zero = count_log_ratios(w, n, [0.0])  # validates the step
    del ratios_zero
    lw = window_log_norms(w.with_s(0.0), n)
    outer = np.array([w.omega((p.lo + p.hi) / 2) >= 0.5 for p in w.pot.pieces])  # type: ignore[misc]
    return np.exp(logsumexp(lw[outer], axis=0) - logsumexp(lw, axis=0))


def count_pmf_exact(w: PerturbedWeight, n: int) -> np.ndarray:
    """Exact law of the number of particles beyond the gap (Poisson binomial)."""
    p = outer_probabilities(w, n)
    pmf = np.zeros(n + 1)
    pmf[0] = 1.0
    for pj in p:
        pmf[1:] = pmf[1:] * (1.0 - pj) + pmf[:-1] * pj
        pmf[0] *= 1.0 - pj
    return pmf


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LogNormEntry:
    j: int
    regime: str
    log_h_exact: float
    log_h_asym: float | None

    @property
    def abs_err(self) -> float | None:
        return None if self.log_h_asym is None else abs(self.log_h_exact - self.log_h_asym)


@dataclass(frozen=True)
class LogNormTable:
    n: int
    s: float
    entries: tuple[LogNormEntry, ...]

    def max_bifurcation_error(self) -> float:
        return max(e.abs_err for e in self.entries if e.abs_err is not None)

    def to_csv(self, header_comments: Iterable[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["j", "regime", "log_h_exact", "log_h_asym", "abs_err"])
        for e in self.entries:
            wr.writerow([e.j, e.regime, repr(e.log_h_exact), "" if e.log_h_asym is None else repr(e.log_h_asym), "" if e.abs_err is None else repr(e.abs_err)])
        return buf.getvalue()


def build_log_norm_table(w: PerturbedWeight, g: QuasiPolyData, n: int, kappa: float | None = None) -> LogNormTable:
    """Exact log norms for j < n with the asymptotic value in the bifurcation window."""
    exact = log_norms(w, n)
    entries = []
    for j in range(n):
        if in_bifurcation_window(j, n, g.tau_star):
            entries.append(LogNormEntry(j, "bifurcation", float(exact[j]), log_norm_asymptotic(g, j, n, w.s, kappa)))
        else:
            entries.append(LogNormEntry(j, "bulk", float(exact[j]), None))
    return LogNormTable(n, w.s, tuple(entries))


def bifurcation_errors(w: PerturbedWeight, g: QuasiPolyData, n: int, kappa: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(indices, |exact - asymptotic|) over the whole bifurcation window, including j >= n."""
    half = bifurcation_halfwidth(n)
    centre = n * g.tau_star
    js = np.arange(max(0, int(math.ceil(centre - half))), int(math.floor(centre + half)) + 1)
    exact = log_norms(w, n, count=int(js[-1]) + 1)
    errs = np.array([abs(exact[j] - log_norm_asymptotic(g, int(j), n, w.s, kappa)) for j in js])
    return js, errs


def cgf_comparison_csv(s_values: Sequence[float], exact: Sequence[float], predicted: Sequence[float], header_comments: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["s", "cgf_exact", "cgf_predicted", "diff"])
    for s, e, p in zip(s_values, exact, predicted):
        wr.writerow([repr(float(s)), repr(float(e)), repr(float(p)), repr(float(e - p))])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Quasi-polynomials and wavefunctions
# --------------------------------------------------------------------------


def quasipoly_eval(g: QuasiPolyData, j: int, n: int, z, branch: str = "inner"):
    """Quasi-polynomial Phi_{j,n}(z).

    Radial geometry collapses to z^j. For a conformal context (see
    :class:`coulombgap.conformal.QuasiPolyContext`) the inner branch uses
    the data of the inner curve and the outer branch that of the outer
    curve; both agree on the exterior of the outer curve.
    """
    if g.context is None:
        return np.asarray(z, dtype=complex) ** j
    return g.context.quasipoly(j, n, z, branch)  # type: ignore[attr-defined]


def _wavefunction_regime(j: int, n: int, tau_star: float) -> None:
    if abs(j - n * tau_star) > math.sqrt(n * math.log(n)):
        raise RegimeError(f"j={j} is outside the window n tau* + O(sqrt(n log n)) covered by the wavefunction asymptotics")


def coefficient_gap(w: PerturbedWeight, g: QuasiPolyData, j: int, n: int) -> float:
    """Relative gap |gamma - c^{-1/2}| / gamma between exact and approximate normalisers."""
    _wavefunction_regime(j, n, g.tau_star)
    exact = log_norm_exact(w, j, n)
    approx = log_norm_asymptotic(g, j, n, w.s, margin=n)
    return abs(1.0 - math.exp(0.5 * (exact - approx)))


def wavefunction_compare(w: PerturbedWeight, g: QuasiPolyData, j: int, n: int, grid: Sequence[complex]) -> float:
    """Max weighted difference between the exact and approximate wavefunctions.

    The weight e^{n(Q - obstacle)/2} uses the obstacle of mass j/n.
    Radially the difference is |gamma - c^{-1/2}| |z|^j e^{-n Q~/2}, so the
    weighted value reduces to |gamma - c^{-1/2}| |z|^j e^{-n obstacle/2 + s omega/2}.
    """
    _wavefunction_regime(j, n, g.tau_star)
    z = np.asarray(grid, dtype=complex)
    r = np.abs(z)
    if np.any(r <= 0.0):
        raise ValueError("grid points must be nonzero")
    exact = log_norm_exact(w, j, n)
    approx = log_norm_asymptotic(g, j, n, w.s, margin=n)
    log_gamma, log_c = -0.5 * exact, -0.5 * approx
    big = max(log_gamma, log_c)
    log_gap = big + math.log(abs(math.exp(log_gamma - big) - math.exp(log_c - big)) + 1e-300)
    obst = Obstacle(w.pot, j / n).values(r)
    log_err = log_gap + j * np.log(r) - 0.5 * n * obst + 0.5 * w.s * w.omega_values(r)
    return float(np.exp(log_err.max()))


def wavefunction_compare_planar(oracle, g: QuasiPolyData, j: int, n: int, grid: Sequence[complex], obstacle: Callable[[np.ndarray], np.ndarray]) -> float:
    """Non-radial analogue of :func:`wavefunction_compare` against a Gram-Schmidt oracle.

    ``oracle`` is a :class:`coulombgap.gram2d.Gram2DResult` computed with s = 0
    and ``obstacle`` evaluates the obstacle of mass j/n. The weighted
    difference reduces to |p_j/||p_j|| - c^{-1/2} Phi_{j,n}| e^{-n obstacle/2}.
    """
    _wavefunction_regime(j, n, g.tau_star)
    if g.context is None:
        raise ValueError("planar comparison needs conformal quasi-polynomial data")
    z = np.asarray(grid, dtype=complex)
    half_obst = 0.5 * n * np.asarray(obstacle(z), dtype=float)
    log_c = log_norm_asymptotic(g, j, n, 0.0, margin=n)
    exact = oracle.poly(j, z) * np.exp(-0.5 * oracle.log_norms[j] - half_obst)
    approx = np.exp(g.context.log_quasipoly(j, n, z) - 0.5 * log_c - half_obst)  # type: ignore[attr-defined]
    return float(np.max(np.abs(exact - approx)))
