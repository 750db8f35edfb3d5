"""Exterior conformal maps, Dirichlet problems on and around them, and gap constants.

An exterior map is stored through its inverse psi(w) = capacity*w + a0 + a1/w + ...
which sends {|w| > 1} onto the exterior of the inner curve C1. Level
curves {|phi1| = rho} play the role of the outer curve C2, so the gap
between C1 and C2 is the image of the annulus 1 < |w| < rho.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import BadGeometry, BranchError, DomainError, IllConditioned, NotConverged, OutsideGap
from .qdist import HeineParams

SCHEMA_VERSION = 1

BoundaryData = Callable[[np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# Maps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExteriorMap:
    """psi(w) = capacity*w + sum_k coeffs[k] * w^{-k}, k = 0, 1, ...

    Construction checks that psi' does not vanish on a grid of |w| >= 1 and
    that the image of the unit circle is a simple curve.
    """

    capacity: float
    coeffs: tuple[complex, ...] = ()
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not (self.capacity > 0.0 and math.isfinite(self.capacity)):
            raise ValueError("capacity must be positive")
        object.__setattr__(self, "coeffs", tuple(complex(c) for c in self.coeffs))
        if self.validate and not self.is_univalent():
            raise ValueError("map is not univalent on |w| >= 1")

    # evaluation ------------------------------------------------------------
    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        out = self.capacity * w
        inv = 1.0 / w
        power = np.ones_like(w)
        for a in self.coeffs:
            out = out + a * power
            power = power * inv
        return out

    def derivative(self, w):
        w = np.asarray(w, dtype=complex)
        out = np.full(w.shape, self.capacity, dtype=complex)
        for k, a in enumerate(self.coeffs):
            if k:
                out = out - k * a * w ** (-k - 1)
        return out

    def second_derivative(self, w):
        w = np.asarray(w, dtype=complex)
        out = np.zeros(w.shape, dtype=complex)
        for k, a in enumerate(self.coeffs):
            if k:
                out = out + k * (k + 1) * a * w ** (-k - 2)
        return out

    def inverse(self, z, tol: float = 1e-15, max_iter: int = 50):
        """phi1(z) by Newton iteration started from (z - a0)/capacity."""
        z = np.asarray(z, dtype=complex)
        a0 = self.coeffs[0] if self.coeffs else 0.0
        w = (z - a0) / self.capacity
        w = np.where(np.abs(w) < 0.5, 0.5 * np.exp(1j * np.angle(w)), w)
        for _ in range(max_iter):
            step = (self(w) - z) / self.derivative(w)
            w = w - step
            if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(w))):
                break
        else:
            if np.any(np.abs(self(w) - z) > 1e-10 * np.maximum(1.0, np.abs(z))):
                raise NotConverged("Newton inversion of the exterior map did not converge")
        return w

    # structure -------------------------------------------------------------
    def is_univalent(self, radii: Sequence[float] = (1.0, 1.02, 1.05, 1.1, 1.2, 1.4, 1.7, 2.0, 3.0, 5.0), points: int = 512) -> bool:
        theta = 2.0 * np.pi * np.arange(points) / points
        for r in radii:
            if np.min(np.abs(self.derivative(r * np.exp(1j * theta)))) < 1e-8 * self.capacity:
                return False
        return _is_simple_polygon(self(np.exp(1j * theta)))

    def scaled(self, lam: float) -> "ExteriorMap":
        """lam * psi."""
        return ExteriorMap(self.capacity * lam, tuple(lam * a for a in self.coeffs), self.validate)

    def level_map(self, rho: float) -> "ExteriorMap":
        """w -> psi(rho w), mapping |w| > 1 onto the exterior of {|phi1| = rho}."""
        return ExteriorMap(self.capacity * rho, tuple(a * rho ** (-k) for k, a in enumerate(self.coeffs)), False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "exterior-map",
            "capacity": self.capacity,
            "coeffs": [[a.real, a.imag] for a in self.coeffs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExteriorMap":
        coeffs = tuple(complex(c[0], c[1]) if isinstance(c, (list, tuple)) else complex(c) for c in data.get("coeffs", []))
        return cls(float(data["capacity"]), coeffs)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ExteriorMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _is_simple_polygon(pts: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect."""
    a = pts
    b = np.roll(pts, -1)
    m = len(pts)

    def cross(u, v):
        return u.real * v.imag - u.imag * v.real

    d = b - a
    # orientation tests for every pair of edges
    o1 = cross(d[:, None], a[None, :] - a[:, None])
    o2 = cross(d[:, None], b[None, :] - a[:, None])
    o3 = cross(d[None, :], a[:, None] - a[None, :])
    o4 = cross(d[None, :], b[:, None] - a[None, :])
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    idx = np.arange(m)
    adjacent = (np.abs(idx[:, None] - idx[None, :]) <= 1) | (np.abs(idx[:, None] - idx[None, :]) == m - 1)
    return not bool(np.any(hit & ~adjacent))


def circle_map(radius: float, centre: complex = 0.0) -> ExteriorMap:
    return ExteriorMap(radius, (centre,) if centre else ())


def ellipse_map(a: float, b: float) -> ExteriorMap:
    """Joukowski map onto the exterior of the ellipse with semi-axes a (real) and b."""
    if not (a > 0 and b > 0):
        raise ValueError("semi-axes must be positive")
    return ExteriorMap((a + b) / 2.0, (0.0, (a - b) / 2.0))


def map_eval(m: ExteriorMap, w):
    """psi(w) for |w| >= 1."""
    w_arr = np.asarray(w, dtype=complex)
    if np.any(np.abs(w_arr) < 1.0 - 1e-14):
        raise DomainError("exterior map evaluated inside the unit disk")
    out = m(w_arr)
    return complex(out) if np.ndim(w) == 0 else out


def capacity_of(m: ExteriorMap) -> float:
    return m.capacity


def level_curve(m: ExteriorMap, rho: float, k_points: int) -> np.ndarray:
    """Points psi(rho e^{i theta_k}) on a uniform angular grid."""
    if not rho >= 1.0:
        raise DomainError("level curves need rho >= 1")
    if k_points < 1:
        raise ValueError("k_points must be positive")
    theta = 2.0 * np.pi * np.arange(k_points) / k_points
    return m(rho * np.exp(1j * theta))


def harmonic_measure(m: ExteriorMap, rho2_over_rho1: float, z, tol: float = 1e-12):
    """log|phi1(z)| / log(rho): 0 on the inner curve, 1 on the outer curve."""
    rho = rho2_over_rho1
    if not rho > 1.0:
        raise BadGeometry("need r2/r1 > 1")
    w = m.inverse(z)
    radius = np.abs(w)
    if np.any(radius < 1.0 - tol) or np.any(radius > rho * (1.0 + tol)):
        raise OutsideGap("point is not in the closed gap")
    out = np.clip(np.log(radius) / math.log(rho), 0.0, 1.0)
    return float(out) if np.ndim(z) == 0 else out


def heine_from_geometry(r1: float, r2: float, c: float) -> HeineParams:
    """theta = (r1/r2) e^{-c}, q = (r1/r2)^2."""
    if not (0.0 < r1 < r2):
        raise BadGeometry(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    ratio = r1 / r2
    return HeineParams(ratio * math.exp(-c), ratio * ratio)


# --------------------------------------------------------------------------
# Fourier helpers
# --------------------------------------------------------------------------


def _fourier(values: np.ndarray) -> np.ndarray:
    """Coefficients U_k with values(theta) = sum_k U_k e^{ik theta}, in FFT order."""
    return np.fft.fft(values) / values.size


def _tail_energy(coef: np.ndarray) -> float:
    m = coef.size
    k = np.abs(np.fft.fftfreq(m, 1.0 / m))
    return float(np.sum(np.abs(coef[k > m // 4]) ** 2))


def _sample(m: ExteriorMap, radius: float, data: BoundaryData, count: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(count) / count
    vals = np.asarray(data(m(radius * np.exp(1j * theta))), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary data must be finite on the curve")
    return vals


_ENERGY_TOL = 1e-24
_MAX_MODES = 1 << 14


# --------------------------------------------------------------------------
# Exterior Dirichlet problem
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExteriorHolomorphic:
    """Bounded holomorphic f on the exterior of a curve with Re f = data there.

    Stored through f(psi(w)) = sum_{k>=0} coeffs[k] w^{-k} with coeffs[0] real.
    """

    map: ExteriorMap
    coeffs: np.ndarray

    @property
    def at_infinity(self) -> float:
        return float(self.coeffs[0].real)

    def in_w(self, w):
        w = np.asarray(w, dtype=complex)
        inv = 1.0 / w
        # Horner in 1/w
        out = np.zeros(w.shape, dtype=complex)
        for a in self.coeffs[::-1]:
            out = out * inv + a
        return out

    def __call__(self, z):
        return self.in_w(self.map.inverse(z))


def exterior_dirichlet(m: ExteriorMap, data: BoundaryData, modes: int = 256) -> ExteriorHolomorphic:
    """Solve Re f = data on psi(|w|=1), f bounded outside and real at infinity."""
    while True:
        coef = _fourier(_sample(m, 1.0, data, 2 * modes))
        if _tail_energy(coef) < _ENERGY_TOL or 2 * modes > _MAX_MODES:
            break
        modes *= 2
    neg = coef[-np.arange(1, modes)]  # U_{-k}, k = 1..modes-1
    out = np.concatenate([[coef[0].real], 2.0 * neg])
    return ExteriorHolomorphic(m, out)


# --------------------------------------------------------------------------
# Annulus Dirichlet problem
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AnnulusDirichletSolution:
    """Harmonic H on the gap split as Re h1 + c * varpi.

    In the w-annulus 1 < |w| < rho the solution reads
    H = A0 + B0 log|w| + sum_{k != 0} (alpha_k |w|^{|k|} + beta_k |w|^{-|k|}) e^{ik theta}.
    ``h1_coeffs[m]`` is the coefficient of w^{-m} in h1 (m >= 0) and
    ``pos_coeffs[m-1]`` that of w^{m}, which condition (C) requires to vanish.
    """

    map: ExteriorMap
    rho: float
    c: float
    log_coefficient: float
    h1_coeffs: np.ndarray
    pos_coeffs: np.ndarray
    compat_residual: float
    modes: int

    @property
    def total_energy(self) -> float:
        return float(np.sum(np.abs(self.h1_coeffs) ** 2) + np.sum(np.abs(self.pos_coeffs) ** 2))

    @property
    def condition_c_holds(self) -> bool:
        return self.compat_residual <= 1e-8 * max(self.total_energy, 1e-300) or self.compat_residual < 1e-24

    def residual_log_coefficient(self) -> float:
        """log|w| coefficient of H - c varpi; zero by construction."""
        return self.log_coefficient - self.c / math.log(self.rho)

    def h1_in_w(self, w):
        w = np.asarray(w, dtype=complex)
        inv = 1.0 / w
        out = np.zeros(w.shape, dtype=complex)
        for a in self.h1_coeffs[::-1]:
            out = out * inv + a
        return out

    def positive_part_in_w(self, w):
        w = np.asarray(w, dtype=complex)
        out = np.zeros(w.shape, dtype=complex)
        for m, a in enumerate(self.pos_coeffs, start=1):
            out = out + a * w**m
        return out

    def H_in_w(self, w):
        w = np.asarray(w, dtype=complex)
        varpi = np.log(np.abs(w)) / math.log(self.rho)
        return (self.h1_in_w(w) + self.positive_part_in_w(w)).real + self.c * varpi

    def H(self, z):
        return self.H_in_w(self.map.inverse(z))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "annulus-dirichlet-solution",
            "rho": self.rho,
            "c": self.c,
            "compat_residual": self.compat_residual,
            "condition_c_holds": self.condition_c_holds,
            "modes": self.modes,
            "h1_coeffs": [[a.real, a.imag] for a in self.h1_coeffs],
            "pos_coeffs": [[a.real, a.imag] for a in self.pos_coeffs],
            "map": self.map.to_dict(),
        }


def annulus_dirichlet(m: ExteriorMap, rho: float, boundary_data: BoundaryData, modes: int = 256) -> AnnulusDirichletSolution:
    """Harmonic extension of boundary data from C1 = psi(|w|=1) and C2 = psi(|w|=rho).

    Each Fourier mode k != 0 gives a 2x2 system for the coefficients of
    |w|^{|k|} and |w|^{-|k|}; it is solved in the scaled variable
    p = rho^{-|k|} so that no power of rho overflows.
    """
    if not rho > 1.0:
        raise BadGeometry("annulus needs rho > 1")
    while True:
        u1 = _fourier(_sample(m, 1.0, boundary_data, 2 * modes))
        u2 = _fourier(_sample(m, rho, boundary_data, 2 * modes))
        if (_tail_energy(u1) + _tail_energy(u2) < _ENERGY_TOL) or 2 * modes > _MAX_MODES:
            break
        modes *= 2
    size = 2 * modes
    k = np.fft.fftfreq(size, 1.0 / size).astype(int)
    absk = np.abs(k)
    keep = (absk > 0) & (absk < modes)
    p = np.where(keep, float(rho) ** (-absk.astype(float)), 0.0)
    det = 1.0 - p * p
    if np.any(det[keep] < 1e-300) or np.any(~np.isfinite(det[keep])):
        raise IllConditioned("per-mode system is singular")
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(keep, (u1 - u2 * p) / det, 0.0)
        # alpha is the coefficient of |w|^{|k|}; store alpha * rho^{|k|} is avoided by using p
        alpha = np.where(keep, p * (u2 - u1 * p) / det, 0.0)
    a0 = float(u1[0].real)
    jump = float(u2[0].real - u1[0].real)
    log_coef = jump / math.log(rho)
    mm = np.arange(1, modes)
    h1 = np.concatenate([[a0], 2.0 * beta[-mm]])
    pos = 2.0 * alpha[mm]
    compat = float(np.sum(np.abs(pos) ** 2))
    return AnnulusDirichletSolution(
        map=m, rho=float(rho), c=jump, log_coefficient=log_coef, h1_coeffs=h1, pos_coeffs=pos, compat_residual=compat, modes=modes
    )


# --------------------------------------------------------------------------
# Elliptic outpost potential and quasi-polynomials
# --------------------------------------------------------------------------


def _sqrt_principal_from_infinity(values: np.ndarray, scale: float) -> np.ndarray:
    """Square root of values continuous from the positive value ``scale`` at infinity."""
    x = values / scale - 1.0
    if np.any(np.abs(x) >= 1.0):
        raise BranchError("square-root branch cannot be tracked from infinity")
    return math.sqrt(scale) * np.sqrt(1.0 + x)


@dataclass(frozen=True)
class EllipticOutpost:
    """Elliptic Ginibre droplet with an outpost on the level curve |phi1| = rho.

    Q equals the elliptic Ginibre potential (|z|^2 - t Re z^2)/(1 - t^2) in an
    elliptic neighbourhood of the droplet, equals the obstacle plus the
    quartic well delta2 (|phi1|^2 - rho^2)^2 / (2 |phi1 phi1'|^2) in the
    belt rho - belt <= |phi1| <= rho + belt, and is +inf elsewhere.
    """

    t: float = 0.2
    rho: float = 1.5
    delta2: float = 4.0
    inner_scale: float = 1.12
    belt: float = 0.2

    def __post_init__(self) -> None:
        if not (0.0 <= self.t < 1.0):
            raise ValueError("t must lie in [0, 1)")
        if not self.rho - self.belt > 1.0:
            raise ValueError("outer belt must stay outside the droplet")

    @property
    def map(self) -> ExteriorMap:
        return ellipse_map(1.0 + self.t, 1.0 - self.t)

    @property
    def delta1(self) -> float:
        return 1.0 / (1.0 - self.t**2)

    @property
    def c(self) -> float:
        return 0.5 * math.log(self.delta2 / self.delta1)

    def _elliptic_radius(self, z):
        z = np.asarray(z, dtype=complex)
        return np.sqrt((z.real / (1.0 + self.t)) ** 2 + (z.imag / (1.0 - self.t)) ** 2)

    def q_inner(self, z):
        z = np.asarray(z, dtype=complex)
        return (np.abs(z) ** 2 - self.t * (z * z).real) / (1.0 - self.t**2)

    def obstacle(self, z):
        """Obstacle of total mass 1: Q1 inside the ellipse, 2 log|w| + 1 + t Re w^{-2} outside."""
        z = np.asarray(z, dtype=complex)
        inside = self._elliptic_radius(z) <= 1.0
        w = self.map.inverse(np.where(inside, 2.0 + 0j, z))
        outside_val = 2.0 * np.log(np.abs(w)) + 1.0 + self.t * (w ** (-2)).real
        return np.where(inside, self.q_inner(z), outside_val)

    def _belt_parts(self, w):
        psi_d = self.map.derivative(w)
        g = psi_d / w
        gp = self.map.second_derivative(w) / w - psi_d / w**2
        u = np.abs(w) ** 2 - self.rho**2
        return psi_d, g, gp, u

    def value(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, np.inf)
        inner = self._elliptic_radius(z) <= self.inner_scale
        out = np.where(inner, self.q_inner(z), out)
        rest = ~inner
        if np.any(rest):
            w = self.map.inverse(z[rest])
            r = np.abs(w)
            in_belt = np.abs(r - self.rho) <= self.belt
            _, g, _, u = self._belt_parts(w)
            val = 2.0 * np.log(r) + 1.0 + self.t * (w ** (-2)).real + 0.5 * self.delta2 * u * u * np.abs(g) ** 2
            sub = np.full(w.shape, np.inf)
            sub[in_belt] = val[in_belt]
            out[rest] = sub
        return out

    def laplacian(self, z):
        """Exact normalised Laplacian on both windows, +nan outside."""
        z = np.asarray(z, dtype=complex)
        out = np.full(z.shape, np.nan)
        inner = self._elliptic_radius(z) <= self.inner_scale
        out[inner] = self.delta1
        rest = ~inner
        if np.any(rest):
            w = self.map.inverse(z[rest])
            psi_d, g, gp, u = self._belt_parts(w)
            lap_w = (np.abs(w) ** 2 + u) * np.abs(g) ** 2 + 2.0 * u * (w * gp * np.conj(g)).real + 0.5 * u * u * np.abs(gp) ** 2
            val = self.delta2 * lap_w / np.abs(psi_d) ** 2
            in_belt = np.abs(np.abs(w) - self.rho) <= self.belt
            sub = np.full(w.shape, np.nan)
            sub[in_belt] = val[in_belt]
            out[rest] = sub
        return out

    def half_log_laplacian(self, z):
        return 0.5 * np.log(self.laplacian(z))


class QuasiPolyContext:
    """Conformal data of the inner and outer curves of an outpost geometry.

    The functions q_k (real part Q on C_k) and h_k (real part (1/2) log Delta Q
    on C_k) are obtained by exterior Dirichlet solves from samples of the
    potential, and the gap constant c by an annulus solve.
    """

    def __init__(
        self,
        m1: ExteriorMap,
        rho: float,
        potential: Callable[[np.ndarray], np.ndarray],
        half_log_laplacian: Callable[[np.ndarray], np.ndarray],
        tau_star: float = 1.0,
        modes: int = 256,
    ) -> None:
        self.m1 = m1
        self.rho = float(rho)
        self.m2 = m1.level_map(rho)
        self.tau_star = tau_star
        self.q1 = exterior_dirichlet(self.m1, potential, modes)
        self.q2 = exterior_dirichlet(self.m2, potential, modes)
        self.h1 = exterior_dirichlet(self.m1, half_log_laplacian, modes)
        self.h2 = exterior_dirichlet(self.m2, half_log_laplacian, modes)
        self.annulus = annulus_dirichlet(self.m1, self.rho, half_log_laplacian, modes)

    @property
    def r1(self) -> float:
        return self.m1.capacity

    @property
    def r2(self) -> float:
        return self.m2.capacity

    @property
    def c(self) -> float:
        return self.annulus.c

    def quasi_poly_data(self):
        from .orthopoly import QuasiPolyData
        from .potential import GapGeometry

        geom = GapGeometry(
            r1=self.r1,
            r2=self.r2,
            c=self.c,
            tau_star=self.tau_star,
            delta1=math.exp(2.0 * self.h1.at_infinity),
            delta2=math.exp(2.0 * self.h2.at_infinity),
        )
        return QuasiPolyData(geom, self.q1.at_infinity, self.q2.at_infinity, self.h1.at_infinity, self.h2.at_infinity, context=self)

    def log_quasipoly(self, j: int, n: int, z, branch: str = "inner"):
        """log Phi_{j,n}(z) (complex), using the inner- or outer-curve formula."""
        z = np.asarray(z, dtype=complex)
        if branch == "inner":
            m, q, h, r = self.m1, self.q1, self.h1, self.r1
        elif branch == "outer":
            m, q, h, r = self.m2, self.q2, self.h2, self.r2
        else:
            raise ValueError("branch must be 'inner' or 'outer'")
        w = m.inverse(z)
        if branch == "outer" and np.any(np.abs(w) < 1.0 - 1e-12):
            raise DomainError("outer formula needs z outside the outer curve")
        sqrt_dpsi = _sqrt_principal_from_infinity(m.derivative(w), m.capacity)
        # sqrt(phi') = 1/sqrt(psi'(w))
        return (
            (j + 0.5) * math.log(r)
            - 0.5 * n * q.at_infinity
            - 0.5 * h.at_infinity
            - np.log(sqrt_dpsi)
            + j * np.log(w)
            + 0.5 * n * q.in_w(w)
            + 0.5 * h.in_w(w)
        )

    def quasipoly(self, j: int, n: int, z, branch: str = "inner"):
        return np.exp(self.log_quasipoly(j, n, z, branch))
