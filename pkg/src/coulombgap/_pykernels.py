"""NumPy implementations of the compiled kernels, used when the extension is absent."""

from __future__ import annotations

import numpy as np


def log_moments(logw: np.ndarray, logr: np.ndarray, j0: int, count: int) -> np.ndarray:
    """out[i] = log sum_k exp(logw[k] + (2*(j0+i)+1)*logr[k])."""
    logw = np.ascontiguousarray(logw, dtype=float)
    logr = np.ascontiguousarray(logr, dtype=float)
    out = np.empty(count)
    chunk = max(1, 2_000_000 // max(1, logw.size))
    for start in range(0, count, chunk):
        e = 2.0 * (j0 + np.arange(start, min(count, start + chunk))) + 1.0
        vals = logw[None, :] + e[:, None] * logr[None, :]
        peak = vals.max(axis=1)
        safe = np.where(np.isfinite(peak), peak, 0.0)
        with np.errstate(divide="ignore"):
            out[start : start + e.size] = safe + np.log(np.exp(vals - safe[:, None]).sum(axis=1))
        out[start : start + e.size][~np.isfinite(peak)] = -np.inf
    return out


def invert_tables(
    r_tab: np.ndarray, key_tab: np.ndarray, slope_tab: np.ndarray, rows: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Cubic Hermite inverse of tabulated ascending keys, one (row, u) pair per output."""
    K = key_tab.shape[1]
    rows = np.asarray(rows, dtype=np.intp)
    u = np.asarray(u, dtype=float)
    lo = np.zeros(rows.shape, dtype=np.intp)
    hi = np.full(rows.shape, K - 1, dtype=np.intp)
    # vectorised bisection: key[lo] <= u < key[hi] on exit
    while True:
        open_ = hi - lo > 1
        if not np.any(open_):
            break
        mid = (lo + hi) >> 1
        below = key_tab[rows, mid] <= u
        lo = np.where(open_ & below, mid, lo)
        hi = np.where(open_ & ~below, mid, hi)
    c0 = key_tab[rows, lo]
    h = key_tab[rows, hi] - c0
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(h > 0.0, (u - c0) / h, 0.0)
    t2, t3 = t * t, t * t * t
    out = (
        (2 * t3 - 3 * t2 + 1) * r_tab[rows, lo]
        + (t3 - 2 * t2 + t) * h * slope_tab[rows, lo]
        + (-2 * t3 + 3 * t2) * r_tab[rows, hi]
        + (t3 - t2) * h * slope_tab[rows, hi]
    )
    out = np.where(u <= key_tab[rows, 0], r_tab[rows, 0], out)
    out = np.where(u >= key_tab[rows, K - 1], r_tab[rows, K - 1], out)
    return out
