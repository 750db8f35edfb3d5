"""Planar Gram-Schmidt oracle for orthogonal polynomials with non-radial weights.

The weight e^{-n Q + s omega} is sampled on a tensor quadrature grid and the
scaled monomials (z/scale)^k are orthogonalised by modified Gram-Schmidt with
one reorthogonalisation pass. Degrees above 48 are refused: in double
precision the Gram matrix of monomials is too ill conditioned beyond that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conformal import EllipticOutpost
from .errors import IllConditioned
from .orthopoly import panel_nodes, window_nodes
from .potential import RadialPotential

MAX_DEGREE = 48


@dataclass(frozen=True)
class PlanarGrid:
    """Quadrature nodes ``z`` with normalised-area weights and potential values."""

    z: np.ndarray
    area: np.ndarray
    q: np.ndarray
    omega: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (self.z.shape == self.area.shape == self.q.shape):
            raise ValueError("grid arrays must have equal shapes")


def radial_grid(pot: RadialPotential, n: int, angles: int = 128, refine: float = 1.0) -> PlanarGrid:
    """Polar grid: composite Gauss-Legendre in r per window, trapezoid in angle."""
    theta = 2.0 * np.pi * np.arange(angles) / angles
    zs, areas = [], []
    for r, wt in window_nodes(pot, n, refine):
        zs.append((r[:, None] * np.exp(1j * theta)[None, :]).ravel())
        areas.append(np.repeat(2.0 * r * wt / angles, angles))
    z = np.concatenate(zs)
    return PlanarGrid(z, np.concatenate(areas), np.asarray(pot.value(np.abs(z)), dtype=float))


def elliptic_disk_grid(t: float, r_max: float, panels: int, angles: int, potential: Callable[[np.ndarray], np.ndarray]) -> PlanarGrid:
    """Grid on {x^2/(1+t)^2 + y^2/(1-t)^2 <= r_max^2} in elliptic polar coordinates."""
    theta = 2.0 * np.pi * np.arange(angles) / angles
    r, wt = panel_nodes(0.0, r_max, panels)
    z = (r[:, None] * ((1 + t) * np.cos(theta) + 1j * (1 - t) * np.sin(theta))[None, :]).ravel()
    area = np.repeat(2.0 * (1 + t) * (1 - t) * r * wt / angles, angles)
    return PlanarGrid(z, area, np.asarray(potential(z), dtype=float))


def elliptic_outpost_grid(eo: EllipticOutpost, panels: int = 48, angles: int = 256) -> PlanarGrid:
    """Grid covering both windows of an :class:`EllipticOutpost` potential."""
    inner = elliptic_disk_grid(eo.t, eo.inner_scale, panels, angles, eo.value)
    theta = 2.0 * np.pi * np.arange(angles) / angles
    r, wt = panel_nodes(eo.rho - eo.belt, eo.rho + eo.belt, panels)
    w = (r[:, None] * np.exp(1j * theta)[None, :]).ravel()
    jac = np.abs(eo.map.derivative(w)) ** 2
    z = eo.map(w)
    area = np.repeat(2.0 * r * wt / angles, angles) * jac
    outer = PlanarGrid(z, area, np.asarray(eo.value(z), dtype=float))
    return PlanarGrid(np.concatenate([inner.z, outer.z]), np.concatenate([inner.area, outer.area]), np.concatenate([inner.q, outer.q]))


@dataclass(frozen=True)
class Gram2DResult:
    """Log squared norms of p_0..p_D and monic coefficients in the scaled basis.

    ``scaled_coeffs[i, j]`` is the coefficient of (z/scale)^i in p_j(z)/scale^j.
    """

    n: int
    s: float
    scale: float
    log_norms: np.ndarray
    scaled_coeffs: np.ndarray
    self_consistency: float

    def monic_coefficients(self, j: int) -> np.ndarray:
        """Coefficients c_0..c_j of p_j(z) = sum_i c_i z^i (c_j = 1)."""
        i = np.arange(j + 1)
        return self.scaled_coeffs[: j + 1, j] * self.scale ** (j - i)

    def poly(self, j: int, z):
        z = np.asarray(z, dtype=complex)
        x = z / self.scale
        out = np.zeros(z.shape, dtype=complex)
        for c in self.scaled_coeffs[j::-1, j]:
            out = out * x + c
        return out * self.scale**j


def gram2d_oracle(grid: PlanarGrid, n: int, s: float = 0.0, max_degree: int | None = None, scale: float | None = None) -> Gram2DResult:
    """Orthogonalise 1, z, ..., z^D against e^{-nQ + s omega} on the grid.

    Raises IllConditioned when a new direction retains less than 1e-13 of
    its original length, which signals a grid too coarse for the degree.
    """
    degree = n - 1 if max_degree is None else max_degree
    if degree > MAX_DEGREE or n > MAX_DEGREE:
        raise ValueError(f"degrees above {MAX_DEGREE} are refused in double precision")
    if degree < 0:
        raise ValueError("max_degree must be nonnegative")
    omega = np.zeros_like(grid.q) if grid.omega is None else grid.omega
    finite = np.isfinite(grid.q) & (grid.area > 0)
    with np.errstate(divide="ignore"):
        logw = np.log(grid.area[finite]) - n * grid.q[finite] + s * omega[finite]
    shift = float(np.max(logw))
    sw = np.exp(0.5 * (logw - shift))
    z = grid.z[finite]
    if scale is None:
        significant = logw - shift > -70.0
        scale = float(np.max(np.abs(z[significant])))
    x = z / scale
    basis = np.empty((z.size, degree + 1), dtype=complex)
    basis[:, 0] = sw
    for k in range(1, degree + 1):
        basis[:, k] = basis[:, k - 1] * x
    ortho = np.empty_like(basis)
    norms2 = np.empty(degree + 1)
    coeffs = np.zeros((degree + 1, degree + 1), dtype=complex)
    for j in range(degree + 1):
        v = basis[:, j].copy()
        start = float(np.linalg.norm(v))
        c = np.zeros(degree + 1, dtype=complex)
        c[j] = 1.0
        for _ in range(2):
            for i in range(j):
                proj = np.vdot(ortho[:, i], v) / norms2[i]
                v -= proj * ortho[:, i]
                c -= proj * coeffs[:, i]
        nv = float(np.linalg.norm(v))
        if not (nv > 1e-13 * start) or start == 0.0:
            raise IllConditioned(f"pivot {nv:.3e} fell below 1e-13 of its scale {start:.3e} at degree {j}")
        ortho[:, j] = v
        norms2[j] = nv * nv
        coeffs[:, j] = c
    # self-consistency: norms recomputed from the coefficients by direct quadrature
    direct = np.empty(degree + 1)
    for j in range(degree + 1):
        p = np.zeros(z.size, dtype=complex)
        for ci in coeffs[j::-1, j]:
            p = p * x + ci
        direct[j] = float(np.sum(np.abs(p * sw) ** 2))
    consistency = float(np.max(np.abs(direct / norms2 - 1.0)))
    if consistency > 1e-8:
        raise IllConditioned(f"recomputed norms deviate by {consistency:.2e}")
    log_norms = np.log(norms2) + shift + 2.0 * np.arange(degree + 1) * math.log(scale)
    return Gram2DResult(n=n, s=s, scale=scale, log_norms=log_norms, scaled_coeffs=coeffs, self_consistency=consistency)
