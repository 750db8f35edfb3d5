"""Radially symmetric confining potentials and their droplet geometry.

A potential is a list of disjoint radius windows, each carrying a smooth
profile; outside the windows the potential is +inf, so no particle can land
there. Areas use the normalised measure dA = dx dy / pi, so the equilibrium
density is the normalised Laplacian Delta Q = (Q'' + Q'/r)/4 and the mass
inside radius r of a radial droplet equals r Q'(r)/2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import MassMismatch, NoGap, NotConverged, OutsideDomain

SCHEMA_VERSION = 1

ArrayLike = float | np.ndarray


# --------------------------------------------------------------------------
# Profiles
# --------------------------------------------------------------------------


class Profile:
    """Smooth scalar function of the radius with derivatives up to order four.

    Subclasses override ``value`` and, when available, the closed-form
    derivatives ``d1``..``d4``. The base implementations fall back to
    sixth-order central differences.
    """

    kind = "abstract"

    def value(self, r: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def _stencil(self, func: Callable[[ArrayLike], ArrayLike], r: ArrayLike, order: int) -> ArrayLike:
        r = np.asarray(r, dtype=float)
        h = np.maximum(np.abs(r), 1e-3) * 1e-3
        if order == 1:
            w = {1: 45.0, 2: -9.0, 3: 1.0}
            acc = sum(c * (func(r + k * h) - func(r - k * h)) for k, c in w.items())
            return acc / (60.0 * h)
        w2 = {0: -490.0, 1: 270.0, 2: -27.0, 3: 2.0}
        acc = w2[0] * func(r) + sum(c * (func(r + k * h) + func(r - k * h)) for k, c in w2.items() if k)
        return acc / (180.0 * h * h)

    def d1(self, r: ArrayLike) -> ArrayLike:
        return self._stencil(self.value, r, 1)

    def d2(self, r: ArrayLike) -> ArrayLike:
        return self._stencil(self.value, r, 2)

    def d3(self, r: ArrayLike) -> ArrayLike:
        return self._stencil(self.d2, r, 1)

    def d4(self, r: ArrayLike) -> ArrayLike:
        return self._stencil(self.d2, r, 2)

    def to_dict(self) -> dict[str, Any]:
        raise TypeError(f"profile {type(self).__name__} is not serialisable")


@dataclass(frozen=True)
class PowerProfile(Profile):
    """coef * r**exponent."""

    coef: float = 1.0
    exponent: float = 2.0
    kind = "power"

    def value(self, r):
        return self.coef * np.asarray(r, dtype=float) ** self.exponent

    def _dk(self, r, k):
        p = self.exponent
        fall = math.prod(p - i for i in range(k))
        if fall == 0.0:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.coef * fall * np.asarray(r, dtype=float) ** (p - k)

    def d1(self, r):
        return self._dk(r, 1)

    def d2(self, r):
        return self._dk(r, 2)

    def d3(self, r):
        return self._dk(r, 3)

    def d4(self, r):
        return self._dk(r, 4)

    def to_dict(self):
        return {"kind": self.kind, "coef": self.coef, "exponent": self.exponent}


@dataclass(frozen=True)
class QuadraticProfile(PowerProfile):
    """coef * r**2, the Ginibre profile when coef = 1."""

    coef: float = 1.0
    exponent: float = field(default=2.0, init=False)
    kind = "quadratic"

    def to_dict(self):
        return {"kind": self.kind, "coef": self.coef}


@dataclass(frozen=True)
class LogQuarticRing(Profile):
    """base + log_coef*log r + delta/(2 r^2) * (r^2 - rho^2)^2.

    Near r = rho this is the obstacle of the inner droplet plus a quartic
    well that pins an outpost circle of radius ``rho`` with Laplacian
    ``delta`` there.
    """

    rho: float = 1.5
    delta: float = 4.0
    base: float = 1.0
    log_coef: float = 2.0
    kind = "log-plus-quartic-ring"

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self.base + self.log_coef * np.log(r) + 0.5 * self.delta * (r * r - self.rho**2) ** 2 / (r * r)

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        return self.log_coef / r + self.delta * (r - self.rho**4 / r**3)

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        return -self.log_coef / r**2 + self.delta * (1.0 + 3.0 * self.rho**4 / r**4)

    def d3(self, r):
        r = np.asarray(r, dtype=float)
        return 2.0 * self.log_coef / r**3 - 12.0 * self.delta * self.rho**4 / r**5

    def d4(self, r):
        r = np.asarray(r, dtype=float)
        return -6.0 * self.log_coef / r**4 + 60.0 * self.delta * self.rho**4 / r**6

    def to_dict(self):
        return {"kind": self.kind, "rho": self.rho, "delta": self.delta, "base": self.base, "log_coef": self.log_coef}


@dataclass(frozen=True)
class ScaledProfile(Profile):
    """inner / tau."""

    inner: Profile
    tau: float
    kind = "scaled"

    def __post_init__(self) -> None:
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")

    def value(self, r):
        return self.inner.value(r) / self.tau

    def d1(self, r):
        return self.inner.d1(r) / self.tau

    def d2(self, r):
        return self.inner.d2(r) / self.tau

    def d3(self, r):
        return self.inner.d3(r) / self.tau

    def d4(self, r):
        return self.inner.d4(r) / self.tau

    def to_dict(self):
        return {"kind": self.kind, "tau": self.tau, "inner": self.inner.to_dict()}


class CallableProfile(Profile):
    """Wraps a plain vectorised function; derivatives by finite differences."""

    kind = "callable"

    def __init__(self, func: Callable[[np.ndarray], np.ndarray]) -> None:
        self._func = func

    def value(self, r):
        return self._func(np.asarray(r, dtype=float))


def profile_from_dict(data: dict[str, Any]) -> Profile:
    kind = data.get("kind")
    if kind == "quadratic":
        return QuadraticProfile(coef=float(data.get("coef", 1.0)))
    if kind == "power":
        return PowerProfile(coef=float(data.get("coef", 1.0)), exponent=float(data["exponent"]))
    if kind == "log-plus-quartic-ring":
        return LogQuarticRing(
            rho=float(data["rho"]),
            delta=float(data["delta"]),
            base=float(data.get("base", 1.0)),
            log_coef=float(data.get("log_coef", 2.0)),
        )
    if kind == "scaled":
        return ScaledProfile(inner=profile_from_dict(data["inner"]), tau=float(data["tau"]))
    raise ValueError(f"unknown profile kind {kind!r}")


# --------------------------------------------------------------------------
# Potential
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Piece:
    lo: float
    hi: float
    profile: Profile


class RadialPotential:
    """Piecewise radial potential, +inf outside the union of its windows."""

    def __init__(self, pieces: Sequence[Piece], check_growth: bool = True) -> None:
        pieces = tuple(pieces)
        if not pieces:
            raise ValueError("a potential needs at least one window")
        prev_hi = -math.inf
        for p in pieces:
            if not (0.0 <= p.lo < p.hi < math.inf):
                raise ValueError(f"bad window [{p.lo}, {p.hi}]")
            if p.lo <= prev_hi:
                raise ValueError("windows must be disjoint and increasing")
            prev_hi = p.hi
        self.pieces = pieces
        self._lo = np.array([p.lo for p in pieces])
        self._hi = np.array([p.hi for p in pieces])
        if check_growth and not self.growth_ok():
            raise ValueError("potential violates the growth condition at the outer end")

    # -- location -----------------------------------------------------------
    @property
    def windows(self) -> list[tuple[float, float]]:
        return [(p.lo, p.hi) for p in self.pieces]

    def window_index(self, r: ArrayLike) -> np.ndarray:
        """Index of the window containing each radius, or -1."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self._lo, r, side="right") - 1
        ok = (idx >= 0) & (r <= self._hi[np.clip(idx, 0, None)])
        return np.where(ok, idx, -1)

    def _apply(self, name: str, r: ArrayLike, outside: float) -> ArrayLike:
        scalar = np.ndim(r) == 0
        r = np.atleast_1d(np.asarray(r, dtype=float))
        idx = self.window_index(r)
        out = np.full(r.shape, outside)
        for k, p in enumerate(self.pieces):
            mask = idx == k
            if np.any(mask):
                out[mask] = getattr(p.profile, name)(r[mask])
        return float(out[0]) if scalar else out

    def _require_inside(self, r: ArrayLike) -> None:
        if np.any(self.window_index(r) < 0):
            raise OutsideDomain(f"radius outside every window: {np.asarray(r)[self.window_index(r) < 0]}")

    def value(self, r: ArrayLike) -> ArrayLike:
        """Q(r); +inf outside the windows."""
        return self._apply("value", r, math.inf)

    def d1(self, r: ArrayLike) -> ArrayLike:
        self._require_inside(r)
        return self._apply("d1", r, math.nan)

    def d2(self, r: ArrayLike) -> ArrayLike:
        self._require_inside(r)
        return self._apply("d2", r, math.nan)

    def d3(self, r: ArrayLike) -> ArrayLike:
        self._require_inside(r)
        return self._apply("d3", r, math.nan)

    def d4(self, r: ArrayLike) -> ArrayLike:
        self._require_inside(r)
        return self._apply("d4", r, math.nan)

    def mass_function(self, r: ArrayLike) -> ArrayLike:
        """r Q'(r) / 2, the equilibrium mass inside radius r on the droplet."""
        return 0.5 * np.asarray(r) * self.d1(r)

    def growth_ok(self, eta: float = 1e-3) -> bool:
        last = self.pieces[-1]
        r = last.hi
        return bool(last.profile.d1(r) - 2.0 * (1.0 + eta) / r > 0.0)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "radial-potential",
            "windows": [{"lo": p.lo, "hi": p.hi, "profile": p.profile.to_dict()} for p in self.pieces],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RadialPotential":
        if data.get("kind", "radial-potential") != "radial-potential":
            raise ValueError("not a radial potential definition")
        windows = data.get("windows")
        if not isinstance(windows, list) or not windows:
            raise ValueError("'windows' must be a nonempty list")
        pieces = [Piece(float(w["lo"]), float(w["hi"]), profile_from_dict(w["profile"])) for w in windows]
        return cls(pieces)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "RadialPotential":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RadialPotential) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(json.dumps(self.to_dict(), sort_keys=True))

    def __repr__(self) -> str:
        return f"RadialPotential({self.to_dict()['windows']!r})"


def ginibre(outer: float = 3.0) -> RadialPotential:
    """Q(r) = r^2 on [0, outer]; the droplet is the unit disk."""
    return RadialPotential([Piece(0.0, outer, QuadraticProfile())])


def ginibre_outpost(
    rho2: float = 1.5,
    delta2: float = 4.0,
    inner: tuple[float, float] = (0.0, 1.24),
    outer: tuple[float, float] = (1.26, 1.8),
) -> RadialPotential:
    """Ginibre droplet plus an outpost circle of radius ``rho2``.

    Inside the inner window Q = r^2. In the outer window Q is the Ginibre
    obstacle 1 + 2 log r plus a quartic well vanishing to second order on
    |z| = rho2, whose Laplacian there equals ``delta2``.
    """
    return RadialPotential(
        [Piece(inner[0], inner[1], QuadraticProfile()), Piece(outer[0], outer[1], LogQuarticRing(rho=rho2, delta=delta2))]
    )


def scaled_potential(pot: RadialPotential, tau: float) -> RadialPotential:
    """The potential Q / tau on the same windows."""
    return RadialPotential([Piece(p.lo, p.hi, ScaledProfile(p.profile, tau)) for p in pot.pieces])


def gap_potential(tau: float = 1.25, **kwargs: Any) -> RadialPotential:
    """The ginibre-outpost potential divided by ``tau``; its inner mass is 1/tau."""
    return scaled_potential(ginibre_outpost(**kwargs), tau)


def laplacian_radial(pot: RadialPotential, r: ArrayLike) -> ArrayLike:
    """Normalised Laplacian (Q'' + Q'/r)/4 of a radial potential."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise OutsideDomain("laplacian_radial needs r > 0")
    out = 0.25 * (pot.d2(r) + pot.d1(r) / r)
    return float(out) if np.ndim(out) == 0 else out


def laplacian_derivatives(pot: RadialPotential, r: ArrayLike) -> tuple[ArrayLike, ArrayLike, ArrayLike]:
    """(Delta Q, d/dr Delta Q, d^2/dr^2 Delta Q) from closed-form derivatives."""
    r = np.asarray(r, dtype=float)
    q1, q2, q3, q4 = pot.d1(r), pot.d2(r), pot.d3(r), pot.d4(r)
    lap = 0.25 * (q2 + q1 / r)
    dlap = 0.25 * (q3 + q2 / r - q1 / r**2)
    d2lap = 0.25 * (q4 + q3 / r - 2.0 * q2 / r**2 + 2.0 * q1 / r**3)
    return lap, dlap, d2lap


# --------------------------------------------------------------------------
# Gap radii and droplet
# --------------------------------------------------------------------------


class GapRadii(NamedTuple):
    b0: float
    a1: float


@dataclass(frozen=True)
class GapSolution:
    """Outer edge ``b0`` of the inner component, inner edge ``a1`` of the outer one."""

    b0: float
    a1: float
    tau_star: float
    residuals: tuple[float, float, float]

    @property
    def radii(self) -> GapRadii:
        return GapRadii(self.b0, self.a1)


def _mass_roots(pot: RadialPotential, k: int, level: float, grid: int = 2048) -> list[float]:
    """Upward crossings of r Q'(r)/2 = level inside window k."""
    piece = pot.pieces[k]
    lo = max(piece.lo, 1e-12 * max(piece.hi, 1.0))
    rs = np.linspace(lo, piece.hi, grid)
    m = 0.5 * rs * piece.profile.d1(rs) - level
    roots = []
    for i in np.nonzero((m[:-1] < 0.0) & (m[1:] >= 0.0))[0]:
        if m[i + 1] == 0.0:
            roots.append(float(rs[i + 1]))
            continue
        root = optimize.brentq(
            lambda r: 0.5 * r * float(piece.profile.d1(r)) - level, rs[i], rs[i + 1], xtol=1e-15, rtol=1e-15, maxiter=200
        )
        roots.append(float(root))
    return roots


def _gap_residuals(pot: RadialPotential, b0: float, a1: float, tau_star: float) -> tuple[float, float, float]:
    return (
        float(pot.mass_function(b0)) - tau_star,
        float(pot.mass_function(a1)) - tau_star,
        float(pot.value(a1) - pot.value(b0)) - 2.0 * tau_star * math.log(a1 / b0),
    )


def _edges_for(pot: RadialPotential, tau: float) -> tuple[float, float] | None:
    inner = _mass_roots(pot, 0, tau)
    outer = _mass_roots(pot, 1, tau)
    if not inner or not outer:
        return None
    return inner[-1], outer[0]


def solve_gap(pot: RadialPotential, tau_star: float | None = None, tol: float = 1e-10) -> GapSolution:
    """Solve the smooth-fit system for a two-component radial droplet.

    With ``tau_star`` given, the two tangency equations fix b0 and a1 and
    the value-matching equation is checked. With ``tau_star=None`` the inner
    mass is solved for as well; the value-matching residual is strictly
    decreasing in tau_star (its derivative is -2 log(a1/b0)), so a
    safeguarded Newton iteration on that scalar equation is globally
    convergent.
    """
    if len(pot.pieces) < 2:
        raise NoGap("a single window cannot host a gap")
    if tau_star is not None:
        if not (0.0 < tau_star <= 1.0):
            raise ValueError("tau_star must lie in (0, 1]")
        edges = _edges_for(pot, tau_star)
        if edges is None or not edges[0] < edges[1]:
            raise NoGap(f"no tangency radii for tau_star={tau_star}")
        b0, a1 = edges
        res = _gap_residuals(pot, b0, a1, tau_star)
        if max(abs(x) for x in res) > tol:
            raise NoGap(f"smooth-fit system inconsistent at tau_star={tau_star}: residuals {res}")
        return GapSolution(b0, a1, tau_star, res)

    def value_gap(tau: float) -> float | None:
        e = _edges_for(pot, tau)
        if e is None or e[0] >= e[1]:
            return None
        return _gap_residuals(pot, e[0], e[1], tau)[2]

    taus = np.linspace(1e-3, 1.0, 400)
    vals = [value_gap(t) for t in taus]
    bracket = None
    for t0, t1, v0, v1 in zip(taus[:-1], taus[1:], vals[:-1], vals[1:]):
        if v0 is not None and v1 is not None and v0 >= 0.0 >= v1:
            bracket = (float(t0), float(t1))
            break
    if bracket is None:
        raise NoGap("value-matching equation has no root for tau_star in (0, 1]")
    lo, hi = bracket
    tau = 0.5 * (lo + hi)
    for _ in range(100):
        b0, a1 = _edges_for(pot, tau)  # type: ignore[misc]
        f = _gap_residuals(pot, b0, a1, tau)[2]
        if f > 0.0:
            lo = tau
        else:
            hi = tau
        step = f / (2.0 * math.log(a1 / b0))
        if abs(step) <= 2.0 * math.ulp(tau) or hi - lo <= 4.0 * math.ulp(hi):
            break
        cand = tau + step
        tau = cand if lo < cand < hi else 0.5 * (lo + hi)
    else:
        raise NotConverged("gap solver did not converge")
    b0, a1 = _edges_for(pot, tau)  # type: ignore[misc]
    res = _gap_residuals(pot, b0, a1, tau)
    if max(abs(x) for x in res) > tol:
        raise NotConverged(f"gap residuals too large: {res}")
    return GapSolution(b0, a1, tau, res)


def solve_gap_radii(pot: RadialPotential, tau_star: float | None = None) -> GapRadii:
    """Radii (b0, a1) bounding the gap; see :func:`solve_gap`."""
    return solve_gap(pot, tau_star).radii


@dataclass(frozen=True)
class DropletStructure:
    """Droplet components [a, b] with their equilibrium masses."""

    tau_star: float
    components: tuple[tuple[float, float], ...]
    masses: tuple[float, ...]
    outpost: float | None = None

    def __post_init__(self) -> None:
        flat = [x for c in self.components for x in c]
        if any(b < a for a, b in zip(flat[:-1], flat[1:])):
            raise MassMismatch("components must be disjoint and increasing")
        if any(m <= 0.0 for m in self.masses):
            raise MassMismatch("masses must be positive")
        if abs(sum(self.masses) - 1.0) > 1e-8:
            raise MassMismatch(f"masses sum to {sum(self.masses)}, not 1")

    @property
    def b0(self) -> float:
        return self.components[0][1]

    @property
    def a1(self) -> float:
        if self.outpost is not None:
            return self.outpost
        return self.components[1][0]

    @property
    def outer_edge(self) -> float:
        return self.components[-1][1]


def _quad_mass(pot: RadialPotential, a: float, b: float) -> float:
    val, _ = integrate.quad(lambda u: 2.0 * float(laplacian_radial(pot, u)) * u, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(val)


def droplet_structure(pot: RadialPotential, b0: float, a1: float, tau_star: float | None = None) -> DropletStructure:
    """Droplet components and masses given the gap radii.

    The outer edge of the outer component solves the total-mass condition
    r Q'(r)/2 = 1; when the inner mass is already 1 the outer component
    degenerates to the outpost circle |z| = a1.
    """
    if not b0 < a1:
        raise MassMismatch(f"gap radii out of order: b0={b0} >= a1={a1}")
    k0 = int(pot.window_index(b0))
    k1 = int(pot.window_index(a1))
    if k0 < 0 or k1 < 0:
        raise OutsideDomain("gap radii must lie inside windows")
    if tau_star is None:
        tau_star = float(pot.mass_function(b0))
    piece = pot.pieces[k0]
    a0 = piece.lo
    if a0 > 0.0 and float(piece.profile.d1(a0)) < 0.0:
        zero = _mass_roots(pot, k0, 0.0)
        a0 = zero[0] if zero else a0
    inner_mass = _quad_mass(pot, a0, b0) if b0 > a0 else 0.0
    if abs(inner_mass - tau_star) > 1e-8:
        raise MassMismatch(f"inner mass {inner_mass} differs from tau_star {tau_star}")
    if abs(1.0 - tau_star) <= 1e-10:
        return DropletStructure(tau_star, ((a0, b0),), (inner_mass,), outpost=a1)
    roots = [r for r in _mass_roots(pot, k1, 1.0) if r > a1]
    if not roots:
        raise MassMismatch("outer component cannot carry the remaining mass inside its window")
    b1 = roots[0]
    outer_mass = _quad_mass(pot, a1, b1)
    if abs(inner_mass + outer_mass - 1.0) > 1e-8:
        raise MassMismatch(f"total mass {inner_mass + outer_mass} differs from 1")
    return DropletStructure(tau_star, ((a0, b0), (a1, b1)), (inner_mass, outer_mass))


# --------------------------------------------------------------------------
# Gap constants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GapGeometry:
    """Constants of an outpost or spectral gap that drive the Heine laws."""

    r1: float
    r2: float
    c: float
    tau_star: float
    delta1: float
    delta2: float

    def __post_init__(self) -> None:
        if not (0.0 < self.r1 < self.r2):
            raise ValueError("need 0 < r1 < r2")
        if not (self.delta1 > 0.0 and self.delta2 > 0.0):
            raise ValueError("Laplacian values must be positive")
        if not (0.0 < self.tau_star <= 1.0):
            raise ValueError("tau_star must lie in (0, 1]")

    @property
    def ratio(self) -> float:
        return self.r1 / self.r2

    @property
    def q(self) -> float:
        return self.ratio**2

    @property
    def is_outpost(self) -> bool:
        return abs(self.tau_star - 1.0) <= 1e-12

    def heine_pair(self, n: int | None = None):
        """(theta_plus, theta_minus) Heine parameters for ensemble size n.

        For an outpost only the first is meaningful and is independent of n.
        """
        from .qdist import HeineParams

        x = 0.0 if (n is None or self.is_outpost) else frac_part(n, self.tau_star)
        plus = HeineParams(math.exp(-self.c) * self.ratio ** (1.0 + 2.0 * x), self.q)
        minus = HeineParams(math.exp(self.c) * self.ratio ** (1.0 - 2.0 * x), self.q)
        return plus, minus

    def to_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("r1", "r2", "c", "tau_star", "delta1", "delta2")}


def gap_constants(pot: RadialPotential, b0: float, a1: float, tau_star: float) -> GapGeometry:
    """Radial gap constants: capacities are the radii, c = log(Delta2/Delta1)/2."""
    d1 = float(laplacian_radial(pot, b0))
    d2 = float(laplacian_radial(pot, a1))
    return GapGeometry(r1=b0, r2=a1, c=0.5 * math.log(d2 / d1), tau_star=tau_star, delta1=d1, delta2=d2)


def frac_part(n: int, tau_star: float) -> float:
    """Fractional part of n*tau_star, snapping products that are integers up to rounding."""
    v = n * tau_star
    k = round(v)
    if abs(v - k) <= 1e-9 * max(1.0, abs(v)):
        return 0.0
    return v - math.floor(v)


def floor_count(n: int, tau_star: float) -> int:
    """floor(n*tau_star) consistent with :func:`frac_part`."""
    return int(round(n * tau_star - frac_part(n, tau_star)))


# --------------------------------------------------------------------------
# Obstacle function
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObstacleEvaluation:
    r: float
    value: float
    coincides: bool


class Obstacle:
    """Obstacle function of total mass ``tau`` for a radial potential.

    Radial subharmonic minorants are convex nondecreasing functions of
    t = log r, and the growth bound caps their slope at 2 tau. The obstacle
    is therefore the convex minorant of t -> Q(e^t) with slopes restricted
    to [0, 2 tau], computed as a restricted Legendre biconjugate. All
    evaluations are vectorised over radii.
    """

    _GRID = 513

    def __init__(self, pot: RadialPotential, tau: float) -> None:
        if not tau > 0.0:
            raise ValueError("tau must be positive")
        self.pot = pot
        self.tau = tau
        self._grids = []
        for p in pot.pieces:
            lo = max(p.lo, 1e-9 * p.hi)
            u = np.linspace(lo, p.hi, self._GRID)
            self._grids.append((p, u, np.log(u), p.profile.value(u)))

    def conjugate(self, beta: np.ndarray) -> np.ndarray:
        """F*(beta) = sup_u (beta log u - Q(u)) over all windows."""
        beta = np.asarray(beta, dtype=float)
        best = np.full(beta.shape, -np.inf)
        for p, u, logu, qu in self._grids:
            vals = beta[..., None] * logu - qu
            i = np.argmax(vals, axis=-1)
            x = u[i]
            # Newton refinement of the stationary point beta/u = Q'(u)
            for _ in range(6):
                g1 = beta / x - p.profile.d1(x)
                g2 = -beta / x**2 - p.profile.d2(x)
                step = np.where(g2 < 0.0, -g1 / np.where(g2 < 0.0, g2, -1.0), 0.0)
                x = np.clip(x + step, u[np.maximum(i - 1, 0)], u[np.minimum(i + 1, len(u) - 1)])
            refined = beta * np.log(x) - p.profile.value(x)
            cand = np.maximum(refined, np.take_along_axis(vals, i[..., None], -1)[..., 0])
            best = np.maximum(best, cand)
        return best

    def values(self, r: ArrayLike) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(~np.isfinite(r)) or np.any(r <= 0.0):
            raise OutsideDomain("obstacle needs finite r > 0")
        t = np.log(r)
        lo = np.zeros_like(t)
        hi = np.full_like(t, 2.0 * self.tau)

        def objective(beta):
            return beta * t - self.conjugate(beta)

        # golden-section search on the concave map beta -> beta t - F*(beta)
        g = (math.sqrt(5.0) - 1.0) / 2.0
        for _ in range(64):
            x1 = hi - g * (hi - lo)
            x2 = lo + g * (hi - lo)
            left = objective(x1) >= objective(x2)
            hi = np.where(left, x2, hi)
            lo = np.where(left, lo, x1)
        mid = 0.5 * (lo + hi)
        cands = np.stack([objective(mid), objective(np.zeros_like(t)), objective(np.full_like(t, 2.0 * self.tau))])
        return cands.max(axis=0)

    def evaluate(self, r: float) -> ObstacleEvaluation:
        val = float(self.values(r)[0])
        q = float(self.pot.value(r))
        return ObstacleEvaluation(r=float(r), value=val, coincides=bool(abs(q - val) < 1e-9))


def obstacle_eval(pot: RadialPotential, tau: float, r: float) -> ObstacleEvaluation:
    """Obstacle value at radius r for total mass tau, with the coincidence flag."""
    return Obstacle(pot, tau).evaluate(r)
