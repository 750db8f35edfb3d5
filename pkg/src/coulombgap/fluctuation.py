"""Gaussian fluctuations of radial linear statistics.

All integrals use the normalised area dA = dxdy/pi and the normalised
Laplacian (Q'' + Q'/r)/4. For radial data dA = 2r dr after the angular
integral, and a boundary circle of radius R contributes 2 pi R ds-weight, so
every formula below is a one-dimensional integral or a sum over circles.

The droplet S is a union of closed annuli (the innermost possibly a disk).
Its complement consists of the bounded gaps between components, an
optional hole around the origin, and the unbounded exterior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate

from . import kernels
from .errors import OutsideDomain
from .orthopoly import PerturbedWeight, SmoothStep, default_step, window_nodes
from .potential import (
    DropletStructure,
    GapGeometry,
    RadialPotential,
    droplet_structure,
    frac_part,
    gap_constants,
    laplacian_derivatives,
    solve_gap,
)
from .qdist import HeineParams, heine_cgf, heine_mean, heine_variance

SCHEMA_VERSION = 1

Func = Callable[[np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# Test functions
# --------------------------------------------------------------------------


def _fd1(func: Func, r, h: float = 1e-4):
    r = np.asarray(r, dtype=float)
    return (func(r - 2 * h) - 8 * func(r - h) + 8 * func(r + h) - func(r + 2 * h)) / (12 * h)


@dataclass(frozen=True)
class RadialTestFunction:
    """A radial function f(r) with its first two derivatives.

    ``window`` is the interval on which the derivatives are trusted.
    """

    f: Func
    df: Func
    d2f: Func
    window: tuple[float, float] = (0.0, math.inf)
    label: str = "f"

    def __call__(self, r):
        return self.f(np.asarray(r, dtype=float))

    @classmethod
    def from_callable(cls, f: Func, window: tuple[float, float] = (0.0, math.inf), label: str = "f") -> "RadialTestFunction":
        """Derivatives by fourth-order central differences."""
        df = lambda r: _fd1(f, r)  # noqa: E731
        return cls(f, df, lambda r: _fd1(df, r), window, label)

    def __add__(self, other: "RadialTestFunction") -> "RadialTestFunction":
        a, b = self, other
        return RadialTestFunction(
            lambda r: a.f(r) + b.f(r), lambda r: a.df(r) + b.df(r), lambda r: a.d2f(r) + b.d2f(r), _meet(a.window, b.window), f"({a.label}+{b.label})"
        )

    def scale(self, c: float) -> "RadialTestFunction":
        a = self
        return RadialTestFunction(lambda r: c * a.f(r), lambda r: c * a.df(r), lambda r: c * a.d2f(r), a.window, f"{c}*{a.label}")

    def __sub__(self, other: "RadialTestFunction") -> "RadialTestFunction":
        return self + other.scale(-1.0)


def _meet(u: tuple[float, float], v: tuple[float, float]) -> tuple[float, float]:
    return max(u[0], v[0]), min(u[1], v[1])


def power_function(k: float, coef: float = 1.0) -> RadialTestFunction:
    """coef * r^k."""
    return RadialTestFunction(
        lambda r: coef * np.asarray(r, dtype=float) ** k,
        lambda r: coef * k * np.asarray(r, dtype=float) ** (k - 1) if k != 0 else np.zeros_like(np.asarray(r, dtype=float)),
        lambda r: coef * k * (k - 1) * np.asarray(r, dtype=float) ** (k - 2) if k not in (0, 1) else np.zeros_like(np.asarray(r, dtype=float)),
        label=f"{coef}*r^{k}",
    )


def constant_function(c: float) -> RadialTestFunction:
    z = lambda r: np.zeros_like(np.asarray(r, dtype=float))  # noqa: E731
    return RadialTestFunction(lambda r: np.full_like(np.asarray(r, dtype=float), c), z, z, label=f"{c}")


def log_function() -> RadialTestFunction:
    return RadialTestFunction(
        lambda r: np.log(np.asarray(r, dtype=float)),
        lambda r: 1.0 / np.asarray(r, dtype=float),
        lambda r: -1.0 / np.asarray(r, dtype=float) ** 2,
        window=(1e-300, math.inf),
        label="log r",
    )


def step_function(step: SmoothStep) -> RadialTestFunction:
    return RadialTestFunction(step, step.d1, step.d2, label="omega")


def _at(func: Func, r: float) -> float:
    return float(np.asarray(func(np.asarray(r, dtype=float))))


# --------------------------------------------------------------------------
# Droplet geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    """A boundary circle of the droplet; ``normal`` is +1 when N points outward in r."""

    radius: float
    normal: int
    label: str


@dataclass(frozen=True)
class ComplementPiece:
    """A component of the complement of S: ``kind`` is 'gap', 'hole' or 'exterior'."""

    kind: str
    lo: float
    hi: float


def droplet_edges(d: DropletStructure) -> list[Edge]:
    edges = []
    for k, (a, b) in enumerate(d.components):
        if a > 0.0:
            edges.append(Edge(a, -1, f"a{k}"))
        edges.append(Edge(b, +1, f"b{k}"))
    return edges


def complement_pieces(d: DropletStructure) -> list[ComplementPiece]:
    comps = d.components
    out = []
    if comps[0][0] > 0.0:
        out.append(ComplementPiece("hole", 0.0, comps[0][0]))
    for (_, b), (a, _) in zip(comps[:-1], comps[1:]):
        out.append(ComplementPiece("gap", b, a))
    out.append(ComplementPiece("exterior", comps[-1][1], math.inf))
    return out


def _find_edge(d: DropletStructure, edge: Edge | str) -> Edge:
    if isinstance(edge, Edge):
        return edge
    for e in droplet_edges(d):
        if e.label == edge.rstrip("+-"):
            return e
    raise OutsideDomain(f"no droplet edge labelled {edge!r}; edges are {[e.label for e in droplet_edges(d)]}")


def _harmonic_fit(lo: float, hi: float, v_lo: float, v_hi: float) -> tuple[float, float]:
    """(a, b) with a + b log r matching the two boundary values."""
    b = (v_hi - v_lo) / math.log(hi / lo)
    return v_lo - b * math.log(lo), b


def _complement_side(d: DropletStructure, e: Edge) -> ComplementPiece:
    for p in complement_pieces(d):
        if (e.normal > 0 and p.lo == e.radius) or (e.normal < 0 and p.hi == e.radius):
            return p
    raise OutsideDomain(f"edge at r={e.radius} has no adjacent complement component")


# --------------------------------------------------------------------------
# Poisson modification and decomposition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonModification:
    """f on S, a + b log r on each gap, constants on the hole and the exterior."""

    droplet: DropletStructure
    f: RadialTestFunction
    gaps: tuple[tuple[float, float, float, float], ...]  # (lo, hi, a, b)
    exterior: float
    hole: float | None

    def _piece_values(self, r: np.ndarray, deriv: bool) -> np.ndarray:
        out = np.asarray(self.f.df(r) if deriv else self.f(r), dtype=float) * np.ones_like(r)
        for lo, hi, a, b in self.gaps:
            m = (r > lo) & (r < hi)
            out = np.where(m, b / r if deriv else a + b * np.log(np.where(m, r, 1.0)), out)
        outer = self.droplet.outer_edge
        out = np.where(r > outer, 0.0 if deriv else self.exterior, out)
        if self.hole is not None:
            inner = self.droplet.components[0][0]
            out = np.where(r < inner, 0.0 if deriv else self.hole, out)
        return out

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = self._piece_values(r, False)
        return float(out) if out.ndim == 0 else out

    def d1(self, r):
        """Radial derivative away from the edges."""
        r = np.asarray(r, dtype=float)
        out = self._piece_values(r, True)
        return float(out) if out.ndim == 0 else out

    @property
    def log_coefficients(self) -> tuple[float, ...]:
        return tuple(g[3] for g in self.gaps)

    def continuity_defect(self) -> float:
        """Largest mismatch of f^S across the droplet edges."""
        worst = 0.0
        for lo, hi, a, b in self.gaps:
            worst = max(worst, abs(a + b * math.log(lo) - _at(self.f, lo)), abs(a + b * math.log(hi) - _at(self.f, hi)))
        worst = max(worst, abs(self.exterior - _at(self.f, self.droplet.outer_edge)))
        if self.hole is not None:
            worst = max(worst, abs(self.hole - _at(self.f, self.droplet.components[0][0])))
        return worst


def poisson_modify(f: RadialTestFunction, d: DropletStructure) -> PoissonModification:
    """Bounded harmonic extension of f|_S to every complement component."""
    gaps = []
    for p in complement_pieces(d):
        if p.kind == "gap":
            a, b = _harmonic_fit(p.lo, p.hi, _at(f, p.lo), _at(f, p.hi))
            gaps.append((p.lo, p.hi, a, b))
    inner = d.components[0][0]
    hole = _at(f, inner) if inner > 0.0 else None
    return PoissonModification(d, f, tuple(gaps), _at(f, d.outer_edge), hole)


@dataclass(frozen=True)
class Decomposition:
    """f = f1 + lam * omega with f1 in the Gaussian class."""

    f: RadialTestFunction
    f1: RadialTestFunction
    lam: float
    omega: SmoothStep | None


def decompose_radial(f: RadialTestFunction, d: DropletStructure, omega: SmoothStep | None = None, pot: RadialPotential | None = None) -> Decomposition:
    """Split off the harmonic-measure part of f across the gap.

    On the gap the Dirichlet solution with data f is f(b0) + lam * varpi with
    lam = f(a1) - f(b0), varpi the harmonic measure of the outer circle.
    Removing lam * omega, with omega a step that is 0 near the inner
    component and 1 near the outer one, leaves f1 whose gap extension is the
    constant f(b0). For a single-component droplet lam = 0 and f1 = f.
    """
    if len(d.components) == 1:
        return Decomposition(f, f, 0.0, omega)
    if len(d.components) != 2:
        raise ValueError("the radial decomposition is implemented for two components")
    if omega is None:
        if pot is None:
            raise ValueError("pass the step omega or the potential that defines the default step")
        omega = default_step(pot)
    b0, a1 = d.components[0][1], d.components[1][0]
    if not (b0 <= omega.m1 and omega.m2 <= a1):
        raise ValueError("the step must switch strictly inside the gap")
    lam = _at(f, a1) - _at(f, b0)
    f1 = f - step_function(omega).scale(lam)
    return Decomposition(f, RadialTestFunction(f1.f, f1.df, f1.d2f, f.window, f"{f.label}-{lam:g}*omega"), lam, omega)


# --------------------------------------------------------------------------
# Neumann jump of L = log Delta Q
# --------------------------------------------------------------------------


def _log_lap(pot: RadialPotential, r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """u = log Delta Q with u' and u'' from closed-form derivatives."""
    lap, dlap, d2lap = laplacian_derivatives(pot, r)
    if np.any(np.asarray(lap) <= 0.0):
        raise OutsideDomain("Delta Q must be positive")
    u1 = dlap / lap
    return np.log(lap), u1, d2lap / lap - u1 * u1


def _extension_slope(pot: RadialPotential, d: DropletStructure, e: Edge) -> float:
    """Radial derivative at the edge of the harmonic extension of log Delta Q."""
    side = _complement_side(d, e)
    if side.kind != "gap":
        return 0.0
    u_lo = float(_log_lap(pot, side.lo)[0])
    u_hi = float(_log_lap(pot, side.hi)[0])
    _, b = _harmonic_fit(side.lo, side.hi, u_lo, u_hi)
    return b / e.radius


def neumann_jump_L(pot: RadialPotential, d: DropletStructure, edge: Edge | str, method: str = "closed") -> float:
    """-d_N (L - L^S) at a droplet edge, with N the normal pointing out of S.

    ``method='closed'`` uses the analytic derivative of log Delta Q and of
    the harmonic extension. ``method='fd'`` uses one-sided fourth-order
    differences: of log Delta Q from inside S, and of the explicit
    extension a + b log r (or the constant) from the complement side.
    """
    e = _find_edge(d, edge)
    if int(pot.window_index(e.radius)) < 0:
        raise OutsideDomain(f"edge r={e.radius} lies outside the potential's windows")
    if method == "closed":
        du = float(_log_lap(pot, e.radius)[1])
        dext = _extension_slope(pot, d, e)
    elif method == "fd":
        r, sgn = e.radius, e.normal
        h = 1e-3 * max(r, 1e-3)
        into_s = lambda k: float(_log_lap(pot, r - sgn * k * h)[0])  # noqa: E731
        # one-sided stencil: f'(x) ~ (25f0 - 48f1 + 36f2 - 16f3 + 3f4)/(12h) along -sgn
        du = sgn * (25 * into_s(0) - 48 * into_s(1) + 36 * into_s(2) - 16 * into_s(3) + 3 * into_s(4)) / (12 * h)
        side = _complement_side(d, e)
        if side.kind == "gap":
            a, b = _harmonic_fit(side.lo, side.hi, float(_log_lap(pot, side.lo)[0]), float(_log_lap(pot, side.hi)[0]))
            ext = lambda k: a + b * math.log(r + sgn * k * h)  # noqa: E731
        else:
            const = float(_log_lap(pot, r)[0])
            ext = lambda k: const  # noqa: E731
        dext = -sgn * (25 * ext(0) - 48 * ext(1) + 36 * ext(2) - 16 * ext(3) + 3 * ext(4)) / (12 * h)
    else:
        raise ValueError(f"unknown method {method!r}")
    return -e.normal * (du - dext)


# --------------------------------------------------------------------------
# Mean and variance
# --------------------------------------------------------------------------


def _quad(func: Callable[[float], float], a: float, b: float) -> float:
    val, _ = integrate.quad(func, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)
    return float(val)


def equilibrium_integral(f: RadialTestFunction, pot: RadialPotential, d: DropletStructure) -> float:
    """sigma(f) = int_S f Delta Q dA."""
    total = 0.0
    for a, b in d.components:
        total += _quad(lambda r: _at(f, r) * 2.0 * r * float(laplacian_derivatives(pot, r)[0]), a, b)
    return total


def ef_vf(f1: RadialTestFunction, pot: RadialPotential, d: DropletStructure) -> tuple[float, float]:
    """Mean e_f and variance v_f of the Gaussian limit of fluct_n f1.

    Radial reductions: the bulk term is (1/4) int_S f1 (r u')' dr with
    u = log Delta Q; each edge of radius R adds (R/4)(d_N f1 + f1 N(L)),
    d_N the derivative along the outward normal of S. The variance is the
    Dirichlet energy of the Poisson modification,
    v_f = (1/2) int_S f1'^2 r dr + (1/2) sum_gaps b^2 log(hi/lo).
    """
    bulk = 0.0
    for a, b in d.components:

        def integrand(r: float) -> float:
            _, u1, u2 = _log_lap(pot, r)
            return _at(f1, r) * float(u1 + r * u2)

        bulk += 0.25 * _quad(integrand, a, b)
    edge_sum = 0.0
    for e in droplet_edges(d):
        r = e.radius
        edge_sum += 0.25 * r * (e.normal * _at(f1.df, r) + _at(f1, r) * neumann_jump_L(pot, d, e))
    e_f = bulk + edge_sum
    ps = poisson_modify(f1, d)
    v_f = 0.0
    for a, b in d.components:
        v_f += 0.5 * _quad(lambda r: _at(f1.df, r) ** 2 * r, a, b)
    for lo, hi, _, b in ps.gaps:
        v_f += 0.5 * b * b * math.log(hi / lo)
    return e_f, v_f


def _cutoff_log_lap(pot: RadialPotential, d: DropletStructure) -> list[tuple[float, float, float, float]]:
    """Ramps (lo, hi, a, b): L = log Delta Q on [a, b], decaying to 0 over [lo, a] and [b, hi]."""
    ramps = []
    for a, b in d.components:
        k = int(pot.window_index(0.5 * (a + b)))
        wlo, whi = pot.pieces[k].lo, pot.pieces[k].hi
        lo = a - 0.5 * (a - wlo) if a > 0.0 else a
        hi = b + 0.5 * (whi - b)
        ramps.append((lo, hi, a, b))
    return ramps


def mean_dual(f1: RadialTestFunction, pot: RadialPotential, d: DropletStructure) -> float:
    """e_f as (1/2) int_S Delta f1 + (1/2) int f1^S Delta L for a cut-off L.

    L equals log Delta Q on S and is tapered to zero by quintic steps inside
    the windows; the result is independent of the taper because f1^S is
    harmonic off S. Serves as an independent check of :func:`ef_vf`.
    """
    first = 0.0
    for a, b in d.components:
        first += 0.25 * (b * _at(f1.df, b) - (a * _at(f1.df, a) if a > 0.0 else 0.0))
    ps = poisson_modify(f1, d)
    second = 0.0
    for lo, hi, a, b in _cutoff_log_lap(pot, d):
        pieces = [(a, b, None)]
        if a > lo:
            pieces.append((lo, a, SmoothStep(lo, a)))
        if hi > b:
            pieces.append((b, hi, SmoothStep(b, hi)))
        for x0, x1, step in pieces:
            down = step is not None and x0 == b

            def integrand(r: float, step=step, down=down) -> float:
                u, u1, u2 = (float(v) for v in _log_lap(pot, r))
                if step is None:
                    c, c1, c2 = 1.0, 0.0, 0.0
                else:
                    c, c1, c2 = float(step(r)), float(step.d1(r)), float(step.d2(r))
                    if down:
                        c, c1, c2 = 1.0 - c, -c1, -c2
                lval1 = c * u1 + c1 * u
                lval2 = c * u2 + 2.0 * c1 * u1 + c2 * u
                return float(ps(r)) * (lval1 + r * lval2)

            second += 0.25 * _quad(integrand, x0, x1)
    return first + second


# --------------------------------------------------------------------------
# Combined prediction
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GapContext:
    """A radial potential with its droplet and gap constants resolved."""

    pot: RadialPotential
    droplet: DropletStructure
    geometry: GapGeometry | None
    omega: SmoothStep | None

    @classmethod
    def from_potential(cls, pot: RadialPotential, tau_star: float | None = None) -> "GapContext":
        if len(pot.pieces) < 2:
            # single window: the droplet is where the mass function is below 1
            from .potential import _mass_roots

            roots = _mass_roots(pot, 0, 1.0)
            if not roots:
                raise OutsideDomain("the droplet edge is not inside the window")
            lo = pot.pieces[0].lo
            d = DropletStructure(1.0, ((lo, roots[0]),), (1.0,))
            return cls(pot, d, None, None)
        sol = solve_gap(pot, tau_star)
        d = droplet_structure(pot, sol.b0, sol.a1, sol.tau_star)
        geom = gap_constants(pot, sol.b0, sol.a1, sol.tau_star)
        return cls(pot, d, geom, default_step(pot))

    @property
    def tau_star(self) -> float:
        return self.droplet.tau_star


@dataclass(frozen=True)
class FluctPrediction:
    """Limit law of fluct_n f: lam (X+ - X-) + lam x_n + N(e_f, v_f)."""

    n: int
    e_f: float
    v_f: float
    lam: float
    heine_plus: HeineParams | None
    heine_minus: HeineParams | None
    x_n: float
    sigma_f: float

    def cgf(self, t: float) -> float:
        """Predicted log E exp(t fluct_n f).

        Includes the deterministic shift t lam x_n: the centring by
        n sigma(f) counts n(1 - tau*) outer particles while the discrete
        part is centred at n - floor(n tau*).
        """
        val = t * self.e_f + 0.5 * t * t * self.v_f
        if self.lam != 0.0 and self.heine_plus is not None and self.heine_minus is not None:
            val += heine_cgf(self.lam * t, self.heine_plus) + heine_cgf(-self.lam * t, self.heine_minus) + t * self.lam * self.x_n
        return val

    @property
    def mean(self) -> float:
        """Predicted mean of fluct_n f, discrete part included."""
        if self.lam == 0.0 or self.heine_plus is None or self.heine_minus is None:
            return self.e_f
        return self.e_f + self.lam * (heine_mean(self.heine_plus) - heine_mean(self.heine_minus) + self.x_n)

    @property
    def variance(self) -> float:
        if self.lam == 0.0 or self.heine_plus is None or self.heine_minus is None:
            return self.v_f
        return self.v_f + self.lam**2 * (heine_variance(self.heine_plus) + heine_variance(self.heine_minus))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "mean": self.mean,
            "variance": self.variance,
            "e_f": self.e_f,
            "v_f": self.v_f,
            "lambda": self.lam,
            "theta_plus": None if self.heine_plus is None else self.heine_plus.theta,
            "theta_minus": None if self.heine_minus is None else self.heine_minus.theta,
            "q": None if self.heine_plus is None else self.heine_plus.q,
            "x_n": self.x_n,
            "sigma_f": self.sigma_f,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def predict_total(f: RadialTestFunction, ctx: GapContext, n: int) -> FluctPrediction:
    """Decompose f, predict the Gaussian part of f1 and attach the discrete part."""
    dec = decompose_radial(f, ctx.droplet, ctx.omega)
    e_f, v_f = ef_vf(dec.f1, ctx.pot, ctx.droplet)
    sigma = equilibrium_integral(f, ctx.pot, ctx.droplet)
    if ctx.geometry is None or dec.lam == 0.0:
        return FluctPrediction(n, e_f, v_f, dec.lam, None, None, 0.0, sigma)
    plus, minus = ctx.geometry.heine_pair(n)
    return FluctPrediction(n, e_f, v_f, dec.lam, plus, minus, frac_part(n, ctx.tau_star), sigma)


# --------------------------------------------------------------------------
# Exact finite-n moments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactLinearStat:
    """Exact finite-n mean and variance of sum_j f(R_j) - n sigma_f."""

    n: int
    mean: float
    variance: float


def _index_weights(w: PerturbedWeight, n: int, refine: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nodes = window_nodes(w.pot, n, refine)
    r = np.concatenate([x for x, _ in nodes])
    wt = np.concatenate([y for _, y in nodes])
    with np.errstate(divide="ignore"):
        logw = np.log(2.0 * wt) - n * w.pot.value(r) + w.s * w.omega_values(r)
    return r, logw, np.log(r)


def exact_linear_cgf(w: PerturbedWeight, n: int, f: RadialTestFunction, sigma_f: float, t_values: Sequence[float], refine: float = 1.0) -> np.ndarray:
    """log E exp(t fluct_n f) = sum_j log(h_j[t f] / h_j[0]) - t n sigma_f, exactly."""
    r, logw, logr = _index_weights(w, n, refine)
    fr = np.asarray(f(r), dtype=float)
    base = kernels.log_moments(np.ascontiguousarray(logw), np.ascontiguousarray(logr), 0, n)
    out = []
    for t in t_values:
        tilted = kernels.log_moments(np.ascontiguousarray(logw + t * fr), np.ascontiguousarray(logr), 0, n)
        out.append(math.fsum((tilted - base).tolist()) - t * n * sigma_f)
    return np.array(out)


def exact_linear_moments(w: PerturbedWeight, n: int, f: RadialTestFunction, sigma_f: float, refine: float = 1.0) -> ExactLinearStat:
    """Mean and variance from the per-index laws r^{2j+1} e^{-nQ} / h_j."""
    r, logw, logr = _index_weights(w, n, refine)
    fr = np.asarray(f(r), dtype=float)
    base = kernels.log_moments(np.ascontiguousarray(logw), np.ascontiguousarray(logr), 0, n)
    mean = 0.0
    var = 0.0
    block = max(1, 4_000_000 // max(1, r.size))
    for j0 in range(0, n, block):
        j = np.arange(j0, min(n, j0 + block))
        with np.errstate(under="ignore"):
            p = np.exp(logw[None, :] + (2 * j[:, None] + 1) * logr[None, :] - base[j][:, None])
        m1 = p @ fr
        m2 = p @ (fr * fr)
        mean += float(np.sum(m1))
        var += float(np.sum(m2 - m1 * m1))
    return ExactLinearStat(n, mean - n * sigma_f, var)
