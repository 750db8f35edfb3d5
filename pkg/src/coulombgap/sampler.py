"""Exact sampling of radial determinantal ensembles through independent moduli.

For a radial weight the moduli |z_1|, ..., |z_n| of the n-point ensemble are,
up to relabelling, independent with R_j having density proportional to
r^{2j+1} e^{-nQ(r) + s omega(r)}, j = 0..n-1. Each law is tabulated once
and sampled by inverting its CDF.

Randomness: replica ``i`` draws from numpy's Philox4x64 generator with key
``seed`` and counter (0, 0, i, 0); the n uniforms of a replica are the first
n outputs of ``Generator.random`` on that stream. Any language with a
Philox4x64-10 implementation can reproduce the streams.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import QuadratureFailure
from .orthopoly import PerturbedWeight, _gauss_legendre

SCHEMA_VERSION = 1

_CUT = 50.0  # log-density drop below the peak that ends a support segment
_COARSE = 2049
_RATIO = 1.1  # geometric node ratio next to the origin
_GRADE_DEPTH = 50.0
_LOG_HALF = math.log(0.5)


@dataclass(frozen=True)
class ModuliSampler:
    """Per-index inverse-CDF tables of the independent moduli.

    Each row holds table radii with two keys: ``lower_key`` = log F(r) and
    ``upper_key`` = -log(1 - F(r)), each with the node slope dr/dkey. Draws
    with u <= 1/2 are inverted on the first key and the rest on the second,
    so both tails keep full relative precision. ``log_mass[j]`` is the log
    of the integral of r^{2j+1} e^{-nQ + s omega} dr, i.e. log h_j - log 2.
    """

    n: int
    weight: PerturbedWeight
    seed: int
    r_tab: np.ndarray
    lower_key: np.ndarray
    lower_slope: np.ndarray
    upper_key: np.ndarray
    upper_slope: np.ndarray
    log_mass: np.ndarray
    _gl: tuple[np.ndarray, np.ndarray] = field(default_factory=lambda: _gauss_legendre(8), repr=False)

    @property
    def table_points(self) -> int:
        return self.r_tab.shape[1]

    # densities -------------------------------------------------------------
    def log_density(self, j: int, r) -> np.ndarray:
        """Normalised log density of R_j."""
        return self.weight.log_density(j, self.n, r) - self.log_mass[j]

    def _node_cdf(self, j: int, k: int) -> float:
        lo = self.lower_key[j, k]
        return math.exp(lo) if lo <= _LOG_HALF else -math.expm1(-self.upper_key[j, k])

    def cdf(self, j: int, r: float) -> float:
        """P(R_j <= r) from the table plus an exact Gauss-Legendre piece."""
        row_r = self.r_tab[j]
        if r <= row_r[0]:
            return 0.0
        if r >= row_r[-1]:
            return 1.0
        k = int(np.searchsorted(row_r, r, side="right") - 1)
        base = self._node_cdf(j, k)
        if self.lower_key[j, k + 1] == self.lower_key[j, k] and self.upper_key[j, k + 1] == self.upper_key[j, k]:
            return base
        x, wts = self._gl
        a = row_r[k]
        nodes = a + 0.5 * (r - a) * (x + 1.0)
        piece = 0.5 * (r - a) * float(np.sum(wts * np.exp(self.log_density(j, nodes))))
        return float(min(1.0, base + piece))

    def exceedance(self, threshold: float) -> np.ndarray:
        """P(R_j >= threshold) for every index."""
        return np.array([1.0 - self.cdf(j, threshold) for j in range(self.n)])

    # sampling --------------------------------------------------------------
    def uniforms(self, replica: int) -> np.ndarray:
        return replica_generator(self.seed, replica).random(self.n)

    def invert(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.intp)
        u = np.asarray(u, dtype=float)
        out = np.empty(u.shape)
        low = u <= 0.5
        with np.errstate(divide="ignore"):
            if np.any(low):
                out[low] = kernels.invert_tables(
                    self.r_tab, self.lower_key, self.lower_slope, np.ascontiguousarray(rows[low]), np.ascontiguousarray(np.log(u[low]))
                )
            if not np.all(low):
                high = ~low
                out[high] = kernels.invert_tables(
                    self.r_tab, self.upper_key, self.upper_slope, np.ascontiguousarray(rows[high]), np.ascontiguousarray(-np.log1p(-u[high]))
                )
        return out

    def sample_moduli(self, replicas: int, start: int = 0) -> np.ndarray:
        """Array (replicas, n) of moduli; row i uses the stream of replica start+i."""
        out = np.empty((replicas, self.n))
        rows = np.arange(self.n, dtype=np.intp)
        for i in range(replicas):
            out[i] = self.invert(rows, self.uniforms(start + i))
        return out

    def sample_index(self, j: int, size: int, seed: int) -> np.ndarray:
        """``size`` draws of R_j alone (for marginal checks)."""
        u = replica_generator(seed, j).random(size)
        return self.invert(np.full(size, j, dtype=np.intp), u)


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    """Counter-based substream of replica ``replica`` under ``seed``."""
    if not (0 <= seed < 2**64):
        raise ValueError("seed must be an unsigned 64-bit integer")
    counter = np.array([0, 0, replica, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def _segments(g_row: np.ndarray, grid: np.ndarray, peak: float) -> tuple[float, float] | None:
    keep = np.nonzero(g_row >= peak - _CUT)[0]
    if keep.size == 0:
        return None
    lo = grid[max(keep[0] - 1, 0)]
    hi = grid[min(keep[-1] + 1, grid.size - 1)]
    return float(lo), float(hi)


def _graded_nodes(a: float, b: float, m: int, j: int) -> np.ndarray:
    """m nodes on [a, b]; a segment starting at the origin gets geometric nodes near it.

    There F(r) ~ r^{2j+2}, and a uniform first cell would not resolve the
    inverse u^{1/(2j+2)}; nodes shrinking by _RATIO per step until F has
    dropped by e^{-_GRADE_DEPTH} make every cell smooth in log F.
    """
    if a > 1e-12 * b:
        return np.linspace(a, b, m)
    extra = int(math.ceil(_GRADE_DEPTH / ((2 * j + 2) * math.log(_RATIO))))
    extra = min(extra, m // 4)
    uniform = np.linspace(a, b, m - extra)
    # uniform cells above this node already have ratio <= _RATIO
    anchor = int(math.ceil(1.0 / (_RATIO - 1.0)))
    graded = uniform[anchor] * _RATIO ** -np.arange(extra + anchor - 1, 0, -1, dtype=float)
    return np.concatenate([uniform[:1], graded, uniform[anchor:]])


def _finite_keys(key: np.ndarray, pad: float) -> np.ndarray:
    """Replace the infinite end keys by finite ones ``pad`` beyond the finite range."""
    finite = np.isfinite(key)
    if not np.any(finite):
        raise QuadratureFailure("tabulated CDF has no finite values")
    out = key.copy()
    out[~finite & (key < 0)] = key[finite].min() - pad
    out[~finite & (key > 0)] = key[finite].max() + pad
    return out


def _capped_slopes(r: np.ndarray, key: np.ndarray, slope: np.ndarray) -> np.ndarray:
    """Cap node slopes at three times the adjacent secants so the Hermite inverse stays monotone."""
    dk = np.diff(key)
    with np.errstate(divide="ignore", invalid="ignore"):
        secant = np.where(dk > 0, np.diff(r) / dk, np.nan)
    cap = 3.0 * np.fmin(np.concatenate([[np.nan], secant]), np.concatenate([secant, [np.nan]]))
    slope = np.where(np.isfinite(slope), slope, np.inf)
    return np.where(np.isfinite(cap), np.minimum(slope, cap), 0.0)


def _row_table(w: PerturbedWeight, n: int, j: int, segs: list[tuple[float, float]], points: int, gl) -> tuple[np.ndarray, ...]:
    x, wts = gl
    lengths = np.array([b - a for a, b in segs])
    alloc = np.maximum(64, np.floor(points * lengths / lengths.sum()).astype(int))
    alloc[-1] = points - alloc[:-1].sum()
    if alloc[-1] < 64:
        raise QuadratureFailure("too few table points for the support segments")
    rs, logs = [], []
    for (a, b), m in zip(segs, alloc):
        r = _graded_nodes(a, b, int(m), j)
        mids = 0.5 * (r[1:] + r[:-1])
        half = 0.5 * np.diff(r)
        nodes = mids[:, None] + half[:, None] * x[None, :]
        g = w.log_density(j, n, nodes)
        top = np.max(g, axis=1)
        safe = np.where(np.isfinite(top), top, 0.0)
        with np.errstate(divide="ignore"):
            log_int = np.where(np.isfinite(top), safe + np.log(half * np.sum(wts * np.exp(g - safe[:, None]), axis=1)), -np.inf)
        rs.append(r)
        logs.append(np.concatenate([[-np.inf], log_int]))
    r_all = np.concatenate(rs)
    log_inc = np.concatenate(logs)
    if not np.any(np.isfinite(log_inc)):
        raise QuadratureFailure(f"index {j} has no mass on the windows")
    log_f = np.logaddexp.accumulate(log_inc)
    log_mass = float(log_f[-1])
    # mass strictly to the right of each node
    log_s = np.concatenate([np.logaddexp.accumulate(log_inc[:0:-1])[::-1], [-np.inf]])
    lower = log_f - log_mass
    upper = log_mass - log_s
    log_dens = w.log_density(j, n, r_all) - log_mass
    with np.errstate(over="ignore", invalid="ignore"):
        lower_slope = np.exp(lower - log_dens)
        upper_slope = np.exp(-upper - log_dens)
    lower = _finite_keys(lower, _GRADE_DEPTH)
    upper = _finite_keys(upper, _GRADE_DEPTH)
    return r_all, lower, _capped_slopes(r_all, lower, lower_slope), upper, _capped_slopes(r_all, upper, upper_slope), log_mass


def build_sampler(w: PerturbedWeight, n: int, table_points: int = 4096, seed: int = 0) -> ModuliSampler:
    """Tabulate the inverse CDFs of R_0, ..., R_{n-1}.

    For each index the support is trimmed to where the log density is within
    50 of its peak; table nodes are spread uniformly over the retained
    segments, with extra geometric nodes next to the origin, and cell masses
    come from an 8-point Gauss-Legendre rule in log space. Node slopes are
    exact (dr/dkey = F/density or (1 - F)/density), capped by the
    Fritsch-Carlson bound so the Hermite interpolant stays monotone.
    """
    if n < 1:
        raise ValueError("n must be positive")
    gl = _gauss_legendre(8)
    coarse = []
    for p in w.pot.pieces:
        grid = np.linspace(max(p.lo, 1e-300), p.hi, _COARSE)
        coarse.append(grid)
    r_tab = np.empty((n, table_points))
    tables = [np.empty_like(r_tab) for _ in range(4)]
    log_mass = np.empty(n)
    for j in range(n):
        rows = [w.log_density(j, n, grid) for grid in coarse]
        peak = max(float(np.max(g)) for g in rows)
        if not math.isfinite(peak):
            raise QuadratureFailure(f"index {j}: the weight vanishes on every window")
        segs = [s for s in (_segments(g, grid, peak) for g, grid in zip(rows, coarse)) if s is not None]
        r_all, *keys, lm = _row_table(w, n, j, segs, table_points, gl)
        if np.any(np.diff(keys[0]) < 0.0) or np.any(np.diff(keys[2]) < 0.0) or np.any(np.diff(r_all) <= 0.0):
            raise QuadratureFailure(f"index {j}: tabulated CDF is not monotone")
        r_tab[j], log_mass[j] = r_all, lm
        for tab, row in zip(tables, keys):
            tab[j] = row
    return ModuliSampler(n, w, int(seed), r_tab, *tables, log_mass)


# --------------------------------------------------------------------------
# Batches
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleBatch:
    """Per-replica statistics with the seed that produced them."""

    n: int
    seed: int
    replicas: int
    counts: np.ndarray
    lin_stats: np.ndarray
    first_replica: int = 0
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.counts.shape != (self.replicas,) or self.lin_stats.shape != (self.replicas,):
            raise ValueError("arrays must have one entry per replica")

    @property
    def seed_chain(self) -> list[tuple[int, int]]:
        """(seed, replica index) identifying each replica's Philox substream."""
        return [(self.seed, self.first_replica + i) for i in range(self.replicas)]

    def pmf(self, shift: int = 0) -> dict[int, float]:
        vals, freq = np.unique(self.counts - shift, return_counts=True)
        return {int(v): float(f) / self.replicas for v, f in zip(vals, freq)}

    def to_csv(self, header_comments: Iterable[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["replica", "count", "lin_stat"])
        for i in range(self.replicas):
            wr.writerow([self.first_replica + i, int(self.counts[i]), repr(float(self.lin_stats[i]))])
        return buf.getvalue()

    def summary(self, model_pmf: Callable[[np.ndarray], np.ndarray] | None = None, shift: int = 0) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "seed": self.seed,
            "replicas": self.replicas,
            "threshold": self.threshold,
            "count_mean": float(np.mean(self.counts)) if self.replicas else None,
            "count_variance": float(np.var(self.counts, ddof=1)) if self.replicas > 1 else None,
            "lin_stat_mean": float(np.mean(self.lin_stats)) if self.replicas else None,
            "lin_stat_variance": float(np.var(self.lin_stats, ddof=1)) if self.replicas > 1 else None,
            "count_shift": shift,
            "pmf": {str(k): v for k, v in self.pmf(shift).items()},
        }
        if model_pmf is not None and self.replicas:
            out["tv_vs_model"] = empirical_tv(self, model_pmf, shift)
        return out


def _blocks(replicas: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(threads, replicas)) if replicas else 1
    edges = np.linspace(0, replicas, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _run_blocks(fn: Callable[[int, int], np.ndarray], replicas: int, threads: int) -> np.ndarray:
    blocks = _blocks(replicas, threads)
    if len(blocks) == 1:
        return fn(*blocks[0])
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        parts = list(pool.map(lambda ab: fn(*ab), blocks))
    return np.concatenate(parts)


def sample_counts(ms: ModuliSampler, threshold: float, replicas: int, threads: int = 1, start: int = 0) -> SampleBatch:
    """Number of moduli at or beyond ``threshold`` in each replica.

    A modulus R_j = F_j^{-1}(U_j) exceeds the threshold exactly when
    U_j >= F_j(threshold), so the counts are obtained from the uniforms and
    the per-index CDF values at the threshold, which is identical to
    inverting every uniform first.
    """
    if replicas < 0:
        raise ValueError("replicas must be nonnegative")
    below = np.array([ms.cdf(j, threshold) for j in range(ms.n)])

    def block(a: int, b: int) -> np.ndarray:
        out = np.empty(b - a, dtype=np.int64)
        for i in range(a, b):
            out[i - a] = int(np.count_nonzero(ms.uniforms(start + i) >= below))
        return out

    counts = _run_blocks(block, replicas, threads) if replicas else np.empty(0, dtype=np.int64)
    return SampleBatch(ms.n, ms.seed, replicas, counts, np.zeros(replicas), start, threshold)


def sample_linear_stat(
    ms: ModuliSampler,
    f: Callable[[np.ndarray], np.ndarray],
    sigma_f: float,
    replicas: int,
    threads: int = 1,
    start: int = 0,
    threshold: float | None = None,
) -> SampleBatch:
    """sum_j f(R_j) - n sigma_f per replica (and, optionally, the outer count)."""
    if replicas < 0:
        raise ValueError("replicas must be nonnegative")
    rows = np.arange(ms.n, dtype=np.intp)

    def block(a: int, b: int) -> np.ndarray:
        out = np.empty((b - a, 2))
        for i in range(a, b):
            r = ms.invert(rows, ms.uniforms(start + i))
            out[i - a, 0] = float(np.sum(f(r))) - ms.n * sigma_f
            out[i - a, 1] = np.count_nonzero(r >= threshold) if threshold is not None else 0
        return out

    res = _run_blocks(block, replicas, threads) if replicas else np.empty((0, 2))
    return SampleBatch(ms.n, ms.seed, replicas, res[:, 1].astype(np.int64), res[:, 0].copy(), start, threshold)


def empirical_tv(batch: SampleBatch, model_pmf: Callable[[np.ndarray], np.ndarray], shift: int = 0) -> float:
    """Total variation between the empirical count law and a model pmf.

    Half the L1 distance over the observed support, plus half the model mass
    falling outside it. ``shift`` is subtracted from the counts first.
    """
    if batch.replicas == 0:
        raise ValueError("empty batch")
    emp = batch.pmf(shift)
    support = np.array(sorted(emp), dtype=np.int64)
    p_hat = np.array([emp[k] for k in support.tolist()])
    p = np.asarray(model_pmf(support), dtype=float)
    tv = 0.5 * float(np.sum(np.abs(p_hat - p))) + 0.5 * max(0.0, 1.0 - float(np.sum(p)))
    return min(1.0, max(0.0, tv))


def summary_json(batch: SampleBatch, **extra: Any) -> str:
    data = batch.summary()
    data.update(extra)
    return json.dumps(data, indent=2, sort_keys=True)


def empirical_cgf(values: np.ndarray, t: float) -> float:
    """log of the sample mean of exp(t X), evaluated stably."""
    x = t * np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    top = float(np.max(x))
    return top + math.log(float(np.mean(np.exp(x - top))))


def bootstrap_se(values: np.ndarray, stat: Callable[[np.ndarray], float], draws: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of ``stat``; resampling uses its own Philox stream."""
    values = np.asarray(values)
    rng = np.random.Generator(np.random.Philox(key=seed, counter=np.array([0, 0, 0, 1], dtype=np.uint64)))
    reps = np.array([stat(values[rng.integers(0, values.size, values.size)]) for _ in range(draws)])
    return float(np.std(reps, ddof=1))
