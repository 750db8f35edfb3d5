"""The oscillatory q-Pochhammer term and the exploratory free-energy fit.

The free-energy expansion with a bounded n-dependent constant is a
conjecture for multi-component droplets, so every output of this module is
labelled exploratory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from ..orthopoly import PerturbedWeight, log_norms
from ..potential import RadialPotential, frac_part, laplacian_radial, solve_gap
from ..qdist import log_qpoch_inf
from .config import GapRecord


@dataclass(frozen=True)
class GapTermRecord:
    rho: float
    mu: float
    x: float


@dataclass(frozen=True)
class GnTerm:
    n: int
    records: tuple[GapTermRecord, ...]
    value: float


def gn_evaluate(gaps: Sequence[GapRecord], n: int) -> GnTerm:
    """Sum over gaps of x log mu - x^2 log rho + log(-rho mu; rho^2) + log(-rho/mu; rho^2).

    For each gap x = frac(n tau), with tau the equilibrium mass inside the
    gap, and mu = sqrt(Delta_inner / Delta_outer) rho^{2x}.
    """
    recs = []
    total = 0.0
    for g in gaps:
        if not 0.0 < g.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {g.rho}")
        x = frac_part(n, g.tau_cumulative)
        mu = math.sqrt(g.delta_inner / g.delta_outer) * g.rho ** (2.0 * x)
        q = g.rho * g.rho
        total += x * math.log(mu) - x * x * math.log(g.rho)
        total += log_qpoch_inf(-g.rho * mu, q) + log_qpoch_inf(-g.rho / mu, q)
        recs.append(GapTermRecord(g.rho, mu, x))
    return GnTerm(n, tuple(recs), total)


def gap_records(pot: RadialPotential, tau_star: float | None = None) -> tuple[GapRecord, ...]:
    """The single gap record of a two-window radial potential."""
    sol = solve_gap(pot, tau_star)
    return (
        GapRecord(
            rho=sol.b0 / sol.a1,
            delta_inner=float(laplacian_radial(pot, sol.b0)),
            delta_outer=float(laplacian_radial(pot, sol.a1)),
            tau_cumulative=sol.tau_star,
        ),
    )


def log_partition(pot: RadialPotential, n: int, refine: float = 2.0) -> float:
    """log Z_n = log n! + sum_{j<n} log h_j for a radial potential."""
    lh = log_norms(PerturbedWeight(pot, 0.0, None), n, refine=refine)
    return float(gammaln(n + 1)) + math.fsum(lh.tolist())


@dataclass(frozen=True)
class FreeEnergyFit:
    """Least-squares fit of C0 n^2 + C1 n log n + C2 n + C3 log n + C4."""

    n: np.ndarray
    log_z: np.ndarray
    coefficients: np.ndarray
    residuals: np.ndarray
    gn: np.ndarray
    gn_projected: np.ndarray
    correlation: float | None
    correlation_projected: float | None

    @property
    def rms_residual(self) -> float:
        return float(np.sqrt(np.mean(self.residuals**2)))

    @property
    def residual_amplitude(self) -> float:
        return 0.5 * float(np.max(self.residuals) - np.min(self.residuals))


def _design(n: np.ndarray) -> np.ndarray:
    ln = np.log(n)
    cols = np.stack([n * n, n * ln, n, ln, np.ones_like(n)], axis=1)
    return cols / np.max(np.abs(cols), axis=0)


def _project_out(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(design)
    resid = y - q @ (q.T @ y)
    coef = np.linalg.lstsq(r, q.T @ y, rcond=None)[0]
    return coef, resid


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return None if den == 0.0 else float(a @ b) / den


def free_energy_fit(log_z: Sequence[float], n_values: Sequence[int], gaps: Sequence[GapRecord] = ()) -> FreeEnergyFit:
    """Fit the smooth part and compare the residual with the oscillatory term.

    ``gn_projected`` is the oscillatory term with the same smooth design
    projected out, which is what the residual can at best reproduce.
    """
    n = np.asarray(n_values, dtype=float)
    if n.size < 6:
        raise ValueError("the fit needs at least six values of n")
    y = np.asarray(log_z, dtype=float)
    design = _design(n)
    scale = np.max(np.abs(_design_raw(n)), axis=0)
    coef, resid = _project_out(design, y)
    gn = np.array([gn_evaluate(gaps, int(k)).value for k in n_values]) if gaps else np.zeros(n.size)
    _, gn_proj = _project_out(design, gn)
    corr = _pearson(resid, gn) if gaps else None
    corr_proj = _pearson(resid, gn_proj) if gaps else None
    return FreeEnergyFit(n, y, coef / scale, resid, gn, gn_proj, corr, corr_proj)


def _design_raw(n: np.ndarray) -> np.ndarray:
    ln = np.log(n)
    return np.stack([n * n, n * ln, n, ln, np.ones_like(n)], axis=1)
